#include "nasdet/module.hpp"

#include <algorithm>
#include <cmath>

#include "nasdet/errors.hpp"
#include "nasdet/rng.hpp"

namespace nasdet {

std::vector<NamedParameter> Module::named_parameters() const {
    std::vector<NamedParameter> out;
    collect("", out);
    return out;
}

void Module::collect(const std::string& prefix, std::vector<NamedParameter>& out) const {
    for (const auto& [name, var] : params_) out.push_back({prefix + name, var});
    for (const auto& [name, child] : children_) child->collect(prefix + name + ".", out);
}

std::vector<Var> Module::parameters() const {
    std::vector<Var> out;
    for (auto& p : named_parameters()) out.push_back(p.var);
    return out;
}

std::vector<NamedBuffer> Module::named_buffers() {
    std::vector<NamedBuffer> out;
    collect_buffers("", out);
    return out;
}

void Module::collect_buffers(const std::string& prefix, std::vector<NamedBuffer>& out) {
    for (auto& [name, t] : buffers_) out.push_back({prefix + name, t});
    for (auto& [name, child] : children_) child->collect_buffers(prefix + name + ".", out);
}

std::int64_t Module::parameter_count() const {
    std::int64_t n = 0;
    for (const auto& p : named_parameters()) n += p.var.value().numel();
    return n;
}

void Module::set_training(bool on) {
    training_ = on;
    for (auto& [name, child] : children_) child->set_training(on);
}

void Module::zero_grad() {
    for (auto& p : named_parameters()) p.var.zero_grad();
}

void Module::set_requires_grad(bool on) {
    for (auto& p : named_parameters()) p.var.node()->requires_grad = on;
}

Var Module::register_parameter(std::string name, Tensor init) {
    Var v = leaf_parameter(std::move(init));
    params_.emplace_back(std::move(name), v);
    return v;
}

void Module::register_buffer(std::string name, Tensor* tensor) { buffers_.emplace_back(std::move(name), tensor); }

void Module::unregister_module(const std::string& name) {
    auto it = std::find_if(children_.begin(), children_.end(), [&](const auto& c) { return c.first == name; });
    if (it == children_.end()) throw StateError("no child module named " + name);
    children_.erase(it);
}

// ---------------------------------------------------------------------------

namespace {

Tensor uniform_tensor(Shape s, double bound, Rng& rng) {
    Tensor t(s);
    for (auto& v : t.values()) v = rng.uniform(-bound, bound);
    return t;
}

}  // namespace

Conv2d::Conv2d(int in_channels, int out_channels, int kernel, fn::ConvSpec spec, bool bias, Rng& rng)
    : in_(in_channels), out_(out_channels), spec_(spec) {
    if (in_channels < 1 || out_channels < 1 || kernel < 1) {
        throw ConfigError("conv2d needs positive channels and kernel");
    }
    const bool depthwise = spec.groups > 1;
    if (spec.groups != 1 && !(spec.groups == in_channels && in_channels == out_channels)) {
        throw ConfigError("conv2d groups must be 1 or depthwise");
    }
    const int per_group_in = depthwise ? 1 : in_channels;
    const int fan_in = per_group_in * kernel * kernel;
    const double bound = std::sqrt(6.0 / double(fan_in));  // He-uniform
    weight_ = register_parameter("weight", uniform_tensor({out_channels, per_group_in, kernel, kernel}, bound, rng));
    if (bias) bias_ = register_parameter("bias", Tensor({1, out_channels, 1, 1}));
}

Var Conv2d::forward(const Var& x) const {
    if (x.shape().c != in_) {
        throw ShapeError("conv2d expects " + std::to_string(in_) + " channels, got " + to_string(x.shape()));
    }
    return fn::conv2d(x, weight_, bias_, spec_);
}

BatchNorm2d::BatchNorm2d(int channels, bool track_running) : track_running_(track_running) {
    gamma_ = register_parameter("gamma", Tensor({1, channels, 1, 1}, 1.0));
    beta_ = register_parameter("beta", Tensor({1, channels, 1, 1}));
    stats_.mean = Tensor({1, channels, 1, 1});
    stats_.var = Tensor({1, channels, 1, 1}, 1.0);
    if (track_running_) {
        register_buffer("running_mean", &stats_.mean);
        register_buffer("running_var", &stats_.var);
    }
}

Var BatchNorm2d::forward(const Var& x) {
    if (!track_running_) return fn::batch_norm(x, gamma_, beta_, nullptr, true);
    if (training()) return fn::batch_norm(x, gamma_, beta_, grad_enabled() ? &stats_ : nullptr, true);
    return fn::batch_norm(x, gamma_, beta_, &stats_, false);
}

Linear::Linear(int in_features, int out_features, bool bias, Rng& rng) {
    if (in_features < 1 || out_features < 1) throw ConfigError("linear needs positive feature counts");
    const double bound = 1.0 / std::sqrt(double(in_features));
    weight_ = register_parameter("weight", uniform_tensor({out_features, in_features, 1, 1}, bound, rng));
    if (bias) bias_ = register_parameter("bias", uniform_tensor({1, out_features, 1, 1}, bound, rng));
}

Var Linear::forward(const Var& x) const { return fn::linear(x, weight_, bias_); }

ReluConvNorm::ReluConvNorm(int in_channels, int out_channels, bool track_running, Rng& rng) {
    conv_ = register_module("conv", std::make_shared<Conv2d>(in_channels, out_channels, 1, fn::ConvSpec{}, false, rng));
    norm_ = register_module("norm", std::make_shared<BatchNorm2d>(out_channels, track_running));
}

Var ReluConvNorm::forward(const Var& x) { return norm_->forward(conv_->forward(fn::relu(x))); }

ConvNorm::ConvNorm(int in_channels, int out_channels, int stride, bool track_running, Rng& rng) {
    conv_ = register_module("conv", std::make_shared<Conv2d>(in_channels, out_channels, 1,
                                                             fn::ConvSpec{stride, 0, 1, 1}, false, rng));
    norm_ = register_module("norm", std::make_shared<BatchNorm2d>(out_channels, track_running));
}

Var ConvNorm::forward(const Var& x) { return norm_->forward(conv_->forward(x)); }

FactorizedReduce::FactorizedReduce(int in_channels, int out_channels, bool track_running, Rng& rng) {
    const int odd_width = out_channels / 2;
    even_ = register_module("even", std::make_shared<Conv2d>(in_channels, out_channels - odd_width, 1,
                                                                fn::ConvSpec{}, false, rng));
    if (odd_width > 0) {
        odd_ = register_module("odd", std::make_shared<Conv2d>(in_channels, odd_width, 1, fn::ConvSpec{}, false, rng));
    }
    project_ = register_module("project",
                               std::make_shared<Conv2d>(out_channels, out_channels, 1, fn::ConvSpec{}, false, rng));
    norm_ = register_module("norm", std::make_shared<BatchNorm2d>(out_channels, track_running));
}

Var FactorizedReduce::forward(const Var& x) {
    const Var r = fn::relu(x);
    std::vector<Var> halves{even_->forward(fn::subsample(r, 2, 0))};
    if (odd_) halves.push_back(odd_->forward(fn::subsample(r, 2, 1)));
    return norm_->forward(project_->forward(fn::concat_channels(halves)));
}

}  // namespace nasdet
