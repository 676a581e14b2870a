#pragma once

#include <memory>
#include <span>
#include <utility>
#include <vector>

#include "nasdet/module.hpp"

namespace nasdet {

enum class GateMode { PerLevel, PerChannel };

/// Intermediate products of one fusion pass.
struct FusionState {
    std::vector<Var> aligned;  // every level at the level-1 resolution, C_f channels
    Var fused;                 // F
    Var pooled;                // V
    Var encoded;               // V'
    Var gates;                 // V_f, N x G x 1 x 1
    Var enhanced;              // F_enhance
    Var logits;                // N x 1 x 2H_1 x 2W_1, before the logistic
    Var prediction;            // sigmoid(logits), in (0,1)
};

/// Channel concatenation of the aligned levels in order.
Var fuse_concat(std::span<const Var> aligned);

/// Scales each gate block of F; the gate count must divide F's width.
Var enhance(const Var& fused, const Var& gates);

class FusionHead : public Module {
public:
    /// `frozen_gates` pins V_f at 1 so the head reduces to a plain
    /// concatenate-and-project decoder.
    FusionHead(std::vector<int> level_channels, int fusion_channels, GateMode mode, bool frozen_gates,
               std::uint64_t seed);

    /// Projects each level to C_f and upsamples it by 2^(i-1).
    std::vector<Var> align_levels(std::span<const Var> pyramid);
    /// V = GAP(F), V' = ReLU(FC(V)), V_f = sigmoid(V').
    void compute_gates(FusionState& s);
    /// F_enhance = V_f x F, then the 1-channel logits upsampled x2.
    /// Returns {F_enhance, logits}.
    std::pair<Var, Var> enhance_and_predict(const Var& fused, const Var& gates);
    FusionState forward(std::span<const Var> pyramid);

    int levels() const { return int(projections_.size()); }
    int fusion_channels() const { return fusion_channels_; }
    GateMode mode() const { return mode_; }
    bool frozen_gates() const { return frozen_; }
    const Linear& encoder() const { return *encoder_; }

private:
    int fusion_channels_;
    GateMode mode_;
    bool frozen_;
    std::vector<std::shared_ptr<Conv2d>> projections_;
    std::shared_ptr<Linear> encoder_;
    std::shared_ptr<Conv2d> classifier_;
};

/// Deep-supervision head: 1x1 projection to one channel, bilinear upsampling
/// by `factor`, logistic.
class BranchHead : public Module {
public:
    BranchHead(int channels, int factor, std::uint64_t seed);
    Var logits(const Var& x);
    Var forward(const Var& x) { return fn::sigmoid(logits(x)); }

private:
    int factor_;
    std::shared_ptr<Conv2d> conv_;
};

}  // namespace nasdet
