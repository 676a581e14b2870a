#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "nasdet/autograd.hpp"
#include "nasdet/functional.hpp"

namespace nasdet {

struct NamedParameter {
    std::string name;
    Var var;
};

struct NamedBuffer {
    std::string name;
    Tensor* tensor;
};

/// Owner of trainable parameters and child modules. Children are shared so a
/// discrete network can reuse the ops of a supernet.
class Module {
public:
    virtual ~Module() = default;

    std::vector<NamedParameter> named_parameters() const;
    std::vector<Var> parameters() const;
    std::vector<NamedBuffer> named_buffers();
    std::int64_t parameter_count() const;

    void set_training(bool on);
    bool training() const { return training_; }
    void zero_grad();
    /// Freezing parameters skips their gradient work in backward.
    void set_requires_grad(bool on);

protected:
    Var register_parameter(std::string name, Tensor init);
    void register_buffer(std::string name, Tensor* tensor);

    template <typename M>
    std::shared_ptr<M> register_module(std::string name, std::shared_ptr<M> child) {
        children_.emplace_back(std::move(name), child);
        return child;
    }
    void unregister_module(const std::string& name);

private:
    void collect(const std::string& prefix, std::vector<NamedParameter>& out) const;
    void collect_buffers(const std::string& prefix, std::vector<NamedBuffer>& out);

    std::vector<std::pair<std::string, Var>> params_;
    std::vector<std::pair<std::string, Tensor*>> buffers_;
    std::vector<std::pair<std::string, std::shared_ptr<Module>>> children_;
    bool training_ = true;
};

// ---------------------------------------------------------------------------
// Basic layers.

class Rng;

class Conv2d : public Module {
public:
    /// `groups` is either 1 or equal to the channel count (depthwise).
    Conv2d(int in_channels, int out_channels, int kernel, fn::ConvSpec spec, bool bias, Rng& rng);
    Var forward(const Var& x) const;

    const Var& weight() const { return weight_; }
    const Var& bias() const { return bias_; }
    int in_channels() const { return in_; }
    int out_channels() const { return out_; }

private:
    int in_, out_;
    fn::ConvSpec spec_;
    Var weight_, bias_;
};

class BatchNorm2d : public Module {
public:
    /// Without `track_running` the layer always normalizes with batch moments.
    BatchNorm2d(int channels, bool track_running);
    Var forward(const Var& x);

    const fn::NormStats& stats() const { return stats_; }

private:
    bool track_running_;
    Var gamma_, beta_;
    fn::NormStats stats_;
};

class Linear : public Module {
public:
    Linear(int in_features, int out_features, bool bias, Rng& rng);
    Var forward(const Var& x) const;

    const Var& weight() const { return weight_; }
    const Var& bias() const { return bias_; }

private:
    Var weight_, bias_;
};

/// A module mapping one feature map to another.
class UnaryModule : public Module {
public:
    virtual Var forward(const Var& x) = 0;
};

/// ReLU -> 1x1 convolution -> normalization.
class ReluConvNorm : public UnaryModule {
public:
    ReluConvNorm(int in_channels, int out_channels, bool track_running, Rng& rng);
    Var forward(const Var& x) override;

private:
    std::shared_ptr<Conv2d> conv_;
    std::shared_ptr<BatchNorm2d> norm_;
};

/// Pointwise convolution with a stride, then normalization. Used as a
/// projection shortcut.
class ConvNorm : public UnaryModule {
public:
    ConvNorm(int in_channels, int out_channels, int stride, bool track_running, Rng& rng);
    Var forward(const Var& x) override;

private:
    std::shared_ptr<Conv2d> conv_;
    std::shared_ptr<BatchNorm2d> norm_;
};

/// Halves resolution: ReLU, two stride-2 pointwise convolutions on pixel grids
/// offset by one, channel concatenation, pointwise re-projection, normalization.
class FactorizedReduce : public UnaryModule {
public:
    FactorizedReduce(int in_channels, int out_channels, bool track_running, Rng& rng);
    Var forward(const Var& x) override;

private:
    std::shared_ptr<Conv2d> even_, odd_, project_;
    std::shared_ptr<BatchNorm2d> norm_;
};

}  // namespace nasdet
