#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "nasdet/files.hpp"
#include "nasdet/loss_metrics.hpp"
#include "nasdet/search.hpp"
#include "nasdet/train.hpp"

namespace nasdet {

/// One JSON object per line with fields stage, epoch, split, loss_out,
/// loss_bra, loss_total, alive_min, alive_max.
std::string search_log_jsonl(const std::vector<EpochRecord>& log);
/// Fields epoch, loss_out, loss_bra, loss_total.
std::string retrain_log_jsonl(const std::vector<TrainRecord>& log);
/// Inverses of the two writers. Throw ParseError naming the line.
std::vector<EpochRecord> parse_search_log(std::string_view text);
std::vector<TrainRecord> parse_retrain_log(std::string_view text);

std::string metrics_json(const MetricsRecord& m, const Complexity* complexity = nullptr);
MetricsRecord parse_metrics(std::string_view text);

/// Loss-curve image of the search (weight and arch splits) and retraining
/// totals, on a log scale, captioned with the test metrics when given.
/// Either log may be empty.
void write_loss_plot(const fs::path& png, const std::vector<EpochRecord>& search,
                     const std::vector<TrainRecord>& retrain, const MetricsRecord* metrics = nullptr);

/// Summary of a run directory: final losses, alive-op trajectory and
/// metrics, as JSON.
std::string report_json(const std::vector<EpochRecord>& search, const std::vector<TrainRecord>& retrain,
                        const MetricsRecord* metrics);

}  // namespace nasdet
