#pragma once

#include <cstdint>
#include <functional>
#include <memory>

#include "nasdet/checkpoint.hpp"
#include "nasdet/config.hpp"
#include "nasdet/files.hpp"

namespace nasdet {

/// File names inside a run directory.
namespace run_files {
inline constexpr const char* kConfig = "config.txt";
inline constexpr const char* kSearchCheckpoint = "search.ckpt";
inline constexpr const char* kSearchLog = "search_log.jsonl";
inline constexpr const char* kGenotype = "genotype.genotype";
inline constexpr const char* kGenotypeDot = "genotype.dot";
inline constexpr const char* kGenotypeText = "genotype.txt";
inline constexpr const char* kModel = "model.ckpt";
inline constexpr const char* kRetrainLog = "retrain_log.jsonl";
inline constexpr const char* kMetrics = "metrics.json";
inline constexpr const char* kPredictions = "predictions";
inline constexpr const char* kReport = "report.json";
inline constexpr const char* kLossPlot = "loss.png";
}  // namespace run_files

struct SearchRunResult {
    Genotype genotype;
    std::vector<EpochRecord> log;
    bool resumed = false;
};

/// Search with a checkpoint and log rewritten after every epoch. With
/// `resume`, continues from <out>/search.ckpt when present; the checkpoint
/// must carry the same configuration digest and seed. Writes the genotype
/// (stamped with the network digest), its DOT graph and a text listing.
SearchRunResult search_to_directory(const RunConfig& cfg, const Dataset& train, std::uint64_t seed,
                                    const fs::path& out, bool resume = false,
                                    const std::function<void(const EpochRecord&)>& progress = {});

struct RetrainRunResult {
    std::unique_ptr<DiscreteNetwork> net;
    RetrainState state;
    bool resumed = false;
};

/// Builds the genotype's network and trains it, checkpointing to
/// <out>/model.ckpt every `checkpoint_every` epochs and at the end. Refuses
/// a genotype stamped with a different network digest.
RetrainRunResult retrain_to_directory(const RunConfig& cfg, const Genotype& genotype, const Dataset& train,
                                      std::uint64_t seed, const fs::path& out, bool resume = false,
                                      int checkpoint_every = 1,
                                      const std::function<void(const TrainRecord&)>& progress = {});

/// Writes <out>/metrics.json and, if asked, one prediction PNG per image.
Evaluation evaluate_to_directory(Network& net, const Dataset& test, double threshold, const fs::path& out,
                                 bool write_predictions);

/// Writes <run>/report.json and <run>/loss.png from whatever logs exist.
void report_directory(const fs::path& run);

}  // namespace nasdet
