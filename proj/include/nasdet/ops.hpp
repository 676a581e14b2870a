#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <string_view>

#include "nasdet/module.hpp"

namespace nasdet {

/// The searchable operation set. Enumerator values are the 1-based table ids.
enum class OpKind : int {
    Zero = 1,
    Identity = 2,
    SepConv3 = 3,
    SepConv5 = 4,
    SepConv7 = 5,
    DilConv3 = 6,
    DilConv5 = 7,
    MaxPool3 = 8,
    AvgPool3 = 9,
    ChannelAtt = 10,
    SpatialAtt = 11,
};

inline constexpr int kNumOps = 11;

inline constexpr std::array<OpKind, kNumOps> kAllOps = {
    OpKind::Zero,     OpKind::Identity, OpKind::SepConv3, OpKind::SepConv5,   OpKind::SepConv7,  OpKind::DilConv3,
    OpKind::DilConv5, OpKind::MaxPool3, OpKind::AvgPool3, OpKind::ChannelAtt, OpKind::SpatialAtt,
};

constexpr int op_id(OpKind k) { return static_cast<int>(k); }
/// Throws ConfigError outside 1..11.
OpKind op_from_id(int id);
/// Canonical operation name, e.g. "Sep_conv_3x3".
std::string_view op_name(OpKind k);
std::optional<OpKind> op_from_name(std::string_view name);

struct OpOptions {
    bool double_separable = false;  // apply each separable block twice
    bool pool_norm = true;          // normalization after pooling
    int se_ratio = 4;               // channel attention bottleneck ratio
    int spatial_kernel = 7;         // spatial attention convolution size
    int dilation = 2;
    bool track_running_stats = false;
};

/// One candidate operation at a fixed width and stride. Channel count is
/// preserved; stride 2 halves each spatial extent with ceiling division.
class CandidateOp : public Module {
public:
    CandidateOp(OpKind kind, int channels, int stride) : kind_(kind), channels_(channels), stride_(stride) {}

    OpKind kind() const { return kind_; }
    int channels() const { return channels_; }
    int stride() const { return stride_; }
    Shape output_shape(Shape in) const;

    /// Applies the op; throws ShapeError on channel mismatch.
    Var apply(const Var& x);

protected:
    virtual Var forward(const Var& x) = 0;

private:
    OpKind kind_;
    int channels_;
    int stride_;
};

std::shared_ptr<CandidateOp> make_candidate(OpKind kind, int channels, int stride, std::uint64_t seed,
                                            const OpOptions& options = {});

inline Var apply_candidate(CandidateOp& op, const Var& x) { return op.apply(x); }

}  // namespace nasdet
