#include "nasdet/fusion.hpp"

#include <string>
#include <tuple>

#include "nasdet/errors.hpp"
#include "nasdet/rng.hpp"

namespace nasdet {

Var fuse_concat(std::span<const Var> aligned) {
    if (aligned.empty()) throw ShapeError("nothing to fuse");
    const Shape s0 = aligned[0].shape();
    for (const auto& a : aligned) {
        const Shape s = a.shape();
        if (s.n != s0.n || s.h != s0.h || s.w != s0.w || s.c != s0.c) {
            throw ShapeError("aligned level " + to_string(s) + " does not match " + to_string(s0));
        }
    }
    return fn::concat_channels(aligned);
}

Var enhance(const Var& fused, const Var& gates) {
    const Shape g = gates.shape();
    if (g.n != fused.shape().n || g.h != 1 || g.w != 1 || g.c < 1 || fused.shape().c % g.c != 0) {
        throw ShapeError("gate vector " + to_string(g) + " does not fit fused map " + to_string(fused.shape()));
    }
    return fn::scale_blocks(fused, gates);
}

FusionHead::FusionHead(std::vector<int> level_channels, int fusion_channels, GateMode mode, bool frozen_gates,
                       std::uint64_t seed)
    : fusion_channels_(fusion_channels), mode_(mode), frozen_(frozen_gates) {
    if (level_channels.empty()) throw ConfigError("fusion head needs at least one level");
    if (fusion_channels < 1) throw ConfigError("fusion width must be positive");
    Rng rng(seed, "fusion");
    for (std::size_t i = 0; i < level_channels.size(); ++i) {
        projections_.push_back(register_module("project" + std::to_string(i + 1),
                                               std::make_shared<Conv2d>(level_channels[i], fusion_channels, 1,
                                                                        fn::ConvSpec{}, true, rng)));
    }
    const int width = fusion_channels * int(level_channels.size());
    if (!frozen_) {
        const int gates = mode == GateMode::PerLevel ? int(level_channels.size()) : width;
        // own stream, so the shared layers start identical with or without gates
        Rng encoder_rng(seed, "fusion.encoder");
        encoder_ = register_module("encoder", std::make_shared<Linear>(width, gates, true, encoder_rng));
    }
    classifier_ = register_module("classifier", std::make_shared<Conv2d>(width, 1, 1, fn::ConvSpec{}, true, rng));
}

std::vector<Var> FusionHead::align_levels(std::span<const Var> pyramid) {
    if (pyramid.size() != projections_.size()) {
        throw ShapeError("fusion head expects " + std::to_string(projections_.size()) + " levels, got " +
                         std::to_string(pyramid.size()));
    }
    const Shape base = pyramid[0].shape();
    std::vector<Var> out;
    for (std::size_t i = 0; i < pyramid.size(); ++i) {
        const int factor = 1 << i;
        const Shape s = pyramid[i].shape();
        if (s.h * factor != base.h || s.w * factor != base.w) {
            throw ShapeError("level " + std::to_string(i + 1) + " " + to_string(s) + " is not 1/" +
                             std::to_string(factor) + " of level 1 " + to_string(base));
        }
        out.push_back(fn::upsample_bilinear(projections_[i]->forward(pyramid[i]), factor));
    }
    return out;
}

void FusionHead::compute_gates(FusionState& s) {
    s.pooled = fn::global_avg_pool(s.fused);
    const int n = s.fused.shape().n;
    if (frozen_) {
        s.encoded = Var();
        s.gates = constant(Tensor({n, levels(), 1, 1}, 1.0));
        return;
    }
    s.encoded = fn::relu(encoder_->forward(s.pooled));
    s.gates = fn::sigmoid(s.encoded);
}

FusionState FusionHead::forward(std::span<const Var> pyramid) {
    FusionState s;
    s.aligned = align_levels(pyramid);
    s.fused = fuse_concat(s.aligned);
    compute_gates(s);
    std::tie(s.enhanced, s.logits) = enhance_and_predict(s.fused, s.gates);
    s.prediction = fn::sigmoid(s.logits);
    return s;
}

std::pair<Var, Var> FusionHead::enhance_and_predict(const Var& fused, const Var& gates) {
    Var enhanced = enhance(fused, gates);
    Var logits = fn::upsample_bilinear(classifier_->forward(enhanced), 2);
    return {enhanced, logits};
}

BranchHead::BranchHead(int channels, int factor, std::uint64_t seed) : factor_(factor) {
    if (factor < 1) throw ConfigError("branch upsampling factor must be positive");
    Rng rng(seed, "branch");
    conv_ = register_module("conv", std::make_shared<Conv2d>(channels, 1, 1, fn::ConvSpec{}, true, rng));
}

Var BranchHead::logits(const Var& x) { return fn::upsample_bilinear(conv_->forward(x), factor_); }

}  // namespace nasdet
