#include "nasdet/ops.hpp"

#include <string>

#include "nasdet/errors.hpp"
#include "nasdet/rng.hpp"

namespace nasdet {
namespace {

constexpr std::array<std::string_view, kNumOps> kNames = {
    "Zero",         "Identity",     "Sep_conv_3x3", "Sep_conv_5x5", "Sep_conv_7x7",  "Dil_conv_3x3",
    "Dil_conv_5x5", "Max_pool_3x3", "Avg_pool_3x3", "Channel_att",  "Spatial_att",
};

class ZeroOp final : public CandidateOp {
public:
    using CandidateOp::CandidateOp;

protected:
    Var forward(const Var& x) override { return fn::zeros(output_shape(x.shape())); }
};

class IdentityOp final : public CandidateOp {
public:
    IdentityOp(int channels, int stride, const OpOptions& opt, Rng& rng)
        : CandidateOp(OpKind::Identity, channels, stride) {
        if (stride == 2) {
            reduce_ = register_module("reduce",
                                      std::make_shared<FactorizedReduce>(channels, channels, opt.track_running_stats, rng));
        }
    }

protected:
    Var forward(const Var& x) override { return reduce_ ? reduce_->forward(x) : x; }

private:
    std::shared_ptr<FactorizedReduce> reduce_;
};

// ReLU -> depthwise k x k -> pointwise -> norm, optionally twice.
class SepConvOp final : public CandidateOp {
public:
    SepConvOp(OpKind kind, int channels, int stride, int kernel, int dilation, const OpOptions& opt, Rng& rng)
        : CandidateOp(kind, channels, stride) {
        const int repeats = (opt.double_separable && dilation == 1) ? 2 : 1;
        for (int r = 0; r < repeats; ++r) {
            Block b;
            const std::string tag = repeats == 1 ? "" : std::to_string(r) + "_";
            const fn::ConvSpec dw{r == 0 ? stride : 1, dilation * (kernel - 1) / 2, dilation, channels};
            b.depthwise = register_module(tag + "depthwise", std::make_shared<Conv2d>(channels, channels, kernel, dw,
                                                                                     false, rng));
            b.pointwise = register_module(tag + "pointwise", std::make_shared<Conv2d>(channels, channels, 1,
                                                                                     fn::ConvSpec{}, false, rng));
            b.norm = register_module(tag + "norm", std::make_shared<BatchNorm2d>(channels, opt.track_running_stats));
            blocks_.push_back(std::move(b));
        }
    }

protected:
    Var forward(const Var& x) override {
        Var y = x;
        for (auto& b : blocks_) y = b.norm->forward(b.pointwise->forward(b.depthwise->forward(fn::relu(y))));
        return y;
    }

private:
    struct Block {
        std::shared_ptr<Conv2d> depthwise, pointwise;
        std::shared_ptr<BatchNorm2d> norm;
    };
    std::vector<Block> blocks_;
};

class PoolOp final : public CandidateOp {
public:
    PoolOp(OpKind kind, int channels, int stride, const OpOptions& opt) : CandidateOp(kind, channels, stride) {
        if (opt.pool_norm) {
            norm_ = register_module("norm", std::make_shared<BatchNorm2d>(channels, opt.track_running_stats));
        }
    }

protected:
    Var forward(const Var& x) override {
        const auto pk = kind() == OpKind::MaxPool3 ? fn::PoolKind::Max : fn::PoolKind::Avg;
        Var y = fn::pool2d(x, pk, 3, stride(), 1);
        return norm_ ? norm_->forward(y) : y;
    }

private:
    std::shared_ptr<BatchNorm2d> norm_;
};

// Squeeze-excitation: pool -> bottleneck -> expand -> logistic gate.
class ChannelAttOp final : public CandidateOp {
public:
    ChannelAttOp(int channels, int stride, const OpOptions& opt, Rng& rng)
        : CandidateOp(OpKind::ChannelAtt, channels, stride) {
        if (opt.se_ratio < 1) throw ConfigError("channel attention ratio must be >= 1");
        if (stride == 2) {
            reduce_ = register_module("reduce",
                                      std::make_shared<FactorizedReduce>(channels, channels, opt.track_running_stats, rng));
        }
        const int hidden = std::max(1, channels / opt.se_ratio);
        squeeze_ = register_module("squeeze", std::make_shared<Linear>(channels, hidden, true, rng));
        excite_ = register_module("excite", std::make_shared<Linear>(hidden, channels, true, rng));
    }

protected:
    Var forward(const Var& x) override {
        const Var in = reduce_ ? reduce_->forward(x) : x;
        const Var gate = fn::sigmoid(excite_->forward(fn::relu(squeeze_->forward(fn::global_avg_pool(in)))));
        return fn::scale_blocks(in, gate);
    }

private:
    std::shared_ptr<FactorizedReduce> reduce_;
    std::shared_ptr<Linear> squeeze_, excite_;
};

// Channel mean/max maps -> k x k convolution -> logistic gate per pixel.
class SpatialAttOp final : public CandidateOp {
public:
    SpatialAttOp(int channels, int stride, const OpOptions& opt, Rng& rng)
        : CandidateOp(OpKind::SpatialAtt, channels, stride) {
        if (opt.spatial_kernel < 1 || opt.spatial_kernel % 2 == 0) {
            throw ConfigError("spatial attention kernel must be odd and positive");
        }
        if (stride == 2) {
            reduce_ = register_module("reduce",
                                      std::make_shared<FactorizedReduce>(channels, channels, opt.track_running_stats, rng));
        }
        conv_ = register_module("conv", std::make_shared<Conv2d>(2, 1, opt.spatial_kernel,
                                                                 fn::ConvSpec{1, opt.spatial_kernel / 2, 1, 1}, false,
                                                                 rng));
    }

protected:
    Var forward(const Var& x) override {
        const Var in = reduce_ ? reduce_->forward(x) : x;
        return fn::scale_spatial(in, fn::sigmoid(conv_->forward(fn::channel_mean_max(in))));
    }

private:
    std::shared_ptr<FactorizedReduce> reduce_;
    std::shared_ptr<Conv2d> conv_;
};

}  // namespace

OpKind op_from_id(int id) {
    if (id < 1 || id > kNumOps) throw ConfigError("operation id out of range: " + std::to_string(id));
    return static_cast<OpKind>(id);
}

std::string_view op_name(OpKind k) {
    const int id = op_id(k);
    if (id < 1 || id > kNumOps) throw ConfigError("unknown operation kind " + std::to_string(id));
    return kNames[std::size_t(id - 1)];
}

std::optional<OpKind> op_from_name(std::string_view name) {
    for (int i = 0; i < kNumOps; ++i)
        if (kNames[std::size_t(i)] == name) return static_cast<OpKind>(i + 1);
    return std::nullopt;
}

Shape CandidateOp::output_shape(Shape in) const {
    if (stride_ == 1) return in;
    return {in.n, in.c, (in.h + 1) / 2, (in.w + 1) / 2};
}

Var CandidateOp::apply(const Var& x) {
    if (x.shape().c != channels_) {
        throw ShapeError(std::string(op_name(kind_)) + " expects " + std::to_string(channels_) + " channels, got " +
                         to_string(x.shape()));
    }
    return forward(x);
}

std::shared_ptr<CandidateOp> make_candidate(OpKind kind, int channels, int stride, std::uint64_t seed,
                                            const OpOptions& options) {
    const int id = op_id(kind);
    if (id < 1 || id > kNumOps) throw ConfigError("unknown operation kind " + std::to_string(id));
    if (channels < 1) throw ConfigError("operation channels must be >= 1, got " + std::to_string(channels));
    if (stride != 1 && stride != 2) throw ConfigError("operation stride must be 1 or 2");
    Rng rng(seed, op_name(kind));
    switch (kind) {
        case OpKind::Zero:
            return std::make_shared<ZeroOp>(kind, channels, stride);
        case OpKind::Identity:
            return std::make_shared<IdentityOp>(channels, stride, options, rng);
        case OpKind::SepConv3:
            return std::make_shared<SepConvOp>(kind, channels, stride, 3, 1, options, rng);
        case OpKind::SepConv5:
            return std::make_shared<SepConvOp>(kind, channels, stride, 5, 1, options, rng);
        case OpKind::SepConv7:
            return std::make_shared<SepConvOp>(kind, channels, stride, 7, 1, options, rng);
        case OpKind::DilConv3:
            return std::make_shared<SepConvOp>(kind, channels, stride, 3, options.dilation, options, rng);
        case OpKind::DilConv5:
            return std::make_shared<SepConvOp>(kind, channels, stride, 5, options.dilation, options, rng);
        case OpKind::MaxPool3:
        case OpKind::AvgPool3:
            return std::make_shared<PoolOp>(kind, channels, stride, options);
        case OpKind::ChannelAtt:
            return std::make_shared<ChannelAttOp>(channels, stride, options, rng);
        case OpKind::SpatialAtt:
            return std::make_shared<SpatialAttOp>(channels, stride, options, rng);
    }
    throw ConfigError("unknown operation kind " + std::to_string(id));
}

}  // namespace nasdet
