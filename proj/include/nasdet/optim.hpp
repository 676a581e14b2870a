#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "nasdet/module.hpp"

namespace nasdet {

/// Per-element trainability of a parameter; absent means fully trainable.
using FreezeMasks = std::map<std::string, std::vector<std::uint8_t>>;

/// Stochastic gradient descent with heavy-ball momentum and L2 decay added to
/// the gradient. State is keyed by parameter name.
class Sgd {
public:
    Sgd(double lr, double momentum, double weight_decay) : lr_(lr), momentum_(momentum), decay_(weight_decay) {}

    /// Parameters without a gradient buffer are skipped.
    void step(std::span<const NamedParameter> params);
    /// Drops state of parameters not in `params`.
    void retain(std::span<const NamedParameter> params);

    std::map<std::string, Tensor>& state() { return velocity_; }
    const std::map<std::string, Tensor>& state() const { return velocity_; }

private:
    double lr_, momentum_, decay_;
    std::map<std::string, Tensor> velocity_;
};

/// Adaptive moments with L2 decay added to the gradient. Masked-out elements
/// are left untouched, including by decay.
class Adam {
public:
    struct Slot {
        Tensor m, v;
        std::int64_t step = 0;
    };

    Adam(double lr, double beta1, double beta2, double eps, double weight_decay)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), decay_(weight_decay) {}

    void step(std::span<const NamedParameter> params, const FreezeMasks& trainable = {});

    std::map<std::string, Slot>& state() { return slots_; }
    const std::map<std::string, Slot>& state() const { return slots_; }

private:
    double lr_, beta1_, beta2_, eps_, decay_;
    std::map<std::string, Slot> slots_;
};

}  // namespace nasdet
