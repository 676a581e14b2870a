#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "nasdet/dataset.hpp"
#include "nasdet/loss_metrics.hpp"
#include "nasdet/optim.hpp"
#include "nasdet/supernet.hpp"

namespace nasdet {

/// Retraining of a discrete network. Defaults follow the search's weight
/// optimizer.
struct RetrainConfig {
    int epochs = 500;
    int batch_size = 4;
    double lr = 0.005;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    bool deep_supervision = true;
    double threshold = 0.5;  // binarization for metrics

    /// Throws ConfigError.
    void validate() const;
};

struct TrainRecord {
    int epoch = 0;
    double loss_out = 0;
    double loss_bra = 0;
    double loss_total = 0;
};

struct RetrainState {
    Sgd opt{0, 0, 0};
    int epoch = 0;  // next epoch to run
    std::vector<TrainRecord> history;
};

struct RetrainHooks {
    std::function<void(const TrainRecord&)> on_epoch;
    std::function<void(const RetrainState&)> on_checkpoint;
};

RetrainState init_retrain(const RetrainConfig& cfg);

/// One pass over `data` in a seed-determined order; throws DivergenceError
/// on a non-finite loss.
TrainRecord train_epoch(Network& net, Sgd& opt, const Dataset& data, const RetrainConfig& cfg, std::uint64_t seed,
                        int epoch);

/// Runs (or continues) training until cfg.epochs.
void retrain(Network& net, const Dataset& data, const RetrainConfig& cfg, std::uint64_t seed, RetrainState& state,
             const RetrainHooks& hooks = {});

struct Evaluation {
    MetricsRecord metrics;
    std::vector<Tensor> predictions;  // 1 x 1 x H x W per sample, when kept
};

/// Inference-mode forward over `data` (normalization uses running
/// statistics) and per-image metric means. Fills params and FLOPs.
Evaluation evaluate(Network& net, const Dataset& data, double threshold = 0.5, int batch_size = 8,
                    bool keep_predictions = false);

}  // namespace nasdet
