#pragma once

#include <span>
#include <utility>
#include <string_view>
#include <vector>

#include "nasdet/autograd.hpp"

namespace nasdet::fn {

struct ConvSpec {
    int stride = 1;
    int padding = 0;
    int dilation = 1;
    int groups = 1;
};

/// Output extent of a sliding window along one axis.
int window_out(int in, int kernel, int stride, int padding, int dilation = 1);

/// 2-D convolution. `weight` is Cout x (Cin/groups) x k x k; `bias` may be
/// undefined. Supported groupings: 1 and depthwise (groups == Cin == Cout).
Var conv2d(const Var& x, const Var& weight, const Var& bias, ConvSpec spec);

/// Running statistics owned by a normalization layer.
struct NormStats {
    Tensor mean;
    Tensor var;
};

/// Per-channel normalization. With `use_batch_stats` the batch mean and
/// variance are used (and folded into `stats` when it is non-null); otherwise
/// `stats` must be given and supplies the moments.
Var batch_norm(const Var& x, const Var& gamma, const Var& beta, NormStats* stats, bool use_batch_stats,
               Real eps = 1e-5, Real momentum = 0.1);

Var relu(const Var& x);

/// While alive on this thread, repeated relu() calls on the same input return
/// one shared result. Ops on a cell edge often pre-activate the same map.
class ReluMemo {
public:
    ReluMemo();
    ~ReluMemo();
    ReluMemo(const ReluMemo&) = delete;
    ReluMemo& operator=(const ReluMemo&) = delete;

private:
    friend Var relu(const Var& x);
    std::vector<std::pair<Var, Var>> entries_;
    ReluMemo* previous_;
};
Var sigmoid(const Var& x);

enum class PoolKind { Max, Avg };
/// Square pooling; average pooling excludes padded cells from the count.
Var pool2d(const Var& x, PoolKind kind, int kernel, int stride, int padding);
Var global_avg_pool(const Var& x);

/// x: N x in x 1 x 1, weight: out x in x 1 x 1, bias: 1 x out x 1 x 1 (optional).
Var linear(const Var& x, const Var& weight, const Var& bias);

/// Multiplies each of the B equal channel blocks of x by gate(n, b).
/// gate: N x B x 1 x 1 with C divisible by B. B == C gives channel scaling.
Var scale_blocks(const Var& x, const Var& gate);
/// Multiplies every channel of x by gate(n, 0, h, w). gate: N x 1 x H x W.
Var scale_spatial(const Var& x, const Var& gate);
/// Channel-wise mean and max maps stacked as N x 2 x H x W.
Var channel_mean_max(const Var& x);

Var concat_channels(std::span<const Var> parts);
Var add(const Var& a, const Var& b);
/// Element-wise sum of same-shape maps.
Var add_n(std::span<const Var> parts);
Var scale(const Var& x, Real s);
/// Scalar sum_i x_i * w_i against a constant tensor of the same shape.
Var dot(const Var& x, const Tensor& w);

/// Selects channels in the given order.
Var gather_channels(const Var& x, std::span<const int> channels);

/// Softmax over the channel axis of a 1 x K x 1 x 1 logit vector.
Var softmax(const Var& logits);
/// sum_k weights[k] * outs[k]; undefined entries of `outs` contribute zero.
Var mix(const Var& weights, std::span<const Var> outs);

/// Bilinear resize by an integer factor (half-pixel centers).
Var upsample_bilinear(const Var& x, int factor);
/// y(i, j) = x(stride*i + offset, stride*j + offset), zero outside x.
Var subsample(const Var& x, int stride, int offset);
Var zeros(Shape shape);

/// Mean over the batch of per-image BCE + dice loss. `pred` is clamped to
/// [clamp_eps, 1 - clamp_eps] before both terms.
Var bce_dice(const Var& pred, const Tensor& target, Real dice_eps = 1.0, Real clamp_eps = 1e-7);

/// The same loss taken on logits, with p = sigmoid(z) and no clamp. The BCE
/// gradient is (p - t) / pixels, so it never vanishes on saturated pixels.
Var bce_dice_logits(const Var& logits, const Tensor& target, Real dice_eps = 1.0);

// ---------------------------------------------------------------------------
// Op tracing for complexity accounting.

struct OpEvent {
    std::string_view kind;
    Shape in;
    Shape out;
    int kernel = 0;
    int groups = 1;
    bool bias = false;
    int arity = 1;
};

/// Collects every op executed on this thread while alive.
class TraceScope {
public:
    TraceScope();
    ~TraceScope();
    TraceScope(const TraceScope&) = delete;
    TraceScope& operator=(const TraceScope&) = delete;

    const std::vector<OpEvent>& events() const { return events_; }

private:
    std::vector<OpEvent> events_;
    std::vector<OpEvent>* previous_;
};

/// Records an event with the active TraceScope, if any.
void trace(const OpEvent& event);

}  // namespace nasdet::fn
