#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "nasdet/module.hpp"

namespace nasdet {

class Network;

// ---------------------------------------------------------------------------
// Losses.

struct LossOptions {
    bool deep_supervision = true;
    int branches = 5;
    Real dice_eps = 1.0;
};

struct LossBundle {
    Var total;  // differentiable Loss_total
    double loss_out = 0;
    std::vector<double> branch;
    double loss_bra = 0;
    double loss_total = 0;
};

/// BCE + dice of a prediction tensor against a binary target, averaged over
/// the batch.
double bce_dice_loss(const Tensor& pred, const Tensor& target, Real dice_eps = 1.0);

/// Loss_out plus the branch losses. With deep supervision off the branch terms
/// are zero. Throws ConfigError unless there are `options.branches` branches.
LossBundle total_loss(const Var& out_pred, std::span<const Var> branch_preds, const Tensor& target,
                      const LossOptions& options = {});

/// The same composition on logits. Training uses this form.
LossBundle total_loss_logits(const Var& out_logits, std::span<const Var> branch_logits, const Tensor& target,
                             const LossOptions& options = {});

struct NetworkOutput;
/// total_loss_logits on a network's output and branch logits.
LossBundle total_loss(const NetworkOutput& out, const Tensor& target, const LossOptions& options = {});

/// Throws StateError if loss_bra or loss_total do not compose within 1e-6.
void check_composition(const LossBundle& b);

// ---------------------------------------------------------------------------
// Pixel metrics.

struct Confusion {
    std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;
};

struct ImageScores {
    double iou = 0, f1 = 0, pa = 0;
};

struct MetricsRecord {
    double iou = 0, f1 = 0, pa = 0;
    std::int64_t params = 0;
    std::int64_t flops = 0;
    std::int64_t images = 0;
};

/// Counts pixels of one image after binarizing `pred` at `threshold`
/// (pred >= threshold is positive). Throws DataError on a non-binary target.
Confusion confusion(std::span<const Real> pred, std::span<const Real> target, double threshold = 0.5);
/// Empty target and empty prediction score 1 on every metric.
ImageScores image_scores(const Confusion& c);

/// Per-image mean over a streamed set of N x 1 x H x W batches.
class MetricsAccumulator {
public:
    explicit MetricsAccumulator(double threshold = 0.5) : threshold_(threshold) {}
    void add(const Tensor& pred, const Tensor& target);
    MetricsRecord result() const;
    const std::vector<ImageScores>& per_image() const { return scores_; }

private:
    double threshold_;
    std::vector<ImageScores> scores_;
};

MetricsRecord segmentation_metrics(const Tensor& pred, const Tensor& target, double threshold = 0.5);

// ---------------------------------------------------------------------------
// Complexity.

struct Complexity {
    std::int64_t params = 0;
    std::int64_t flops = 0;
    std::map<std::string, std::int64_t> flops_by_kind;
};

/// FLOPs of one traced op. Throws AccountingError for kinds without a rule.
std::int64_t op_flops(const fn::OpEvent& e);

/// Runs `forward` without gradients while tracing and sums the rule table.
Complexity count_params_flops(const Module& module, const std::function<void()>& forward);
/// Single-image forward through a network at `input` (batch taken as 1).
Complexity count_params_flops(Network& network, Shape input);

}  // namespace nasdet
