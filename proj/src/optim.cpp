#include "nasdet/optim.hpp"

#include <cmath>
#include <set>

#include "nasdet/errors.hpp"

namespace nasdet {

void Sgd::step(std::span<const NamedParameter> params) {
    for (const auto& p : params) {
        Var var = p.var;
        if (var.grad().empty()) continue;
        Tensor& w = var.mutable_value();
        const Tensor& g = var.grad();
        auto [it, fresh] = velocity_.try_emplace(p.name);
        Tensor& buf = it->second;
        if (!fresh && !(buf.shape() == w.shape())) throw StateError("optimizer state shape changed for " + p.name);
        if (fresh) buf = Tensor(w.shape());
        for (std::int64_t i = 0; i < w.numel(); ++i) {
            const Real d = g[i] + decay_ * w[i];
            buf[i] = fresh ? d : momentum_ * buf[i] + d;
            w[i] -= lr_ * buf[i];
        }
    }
}

void Sgd::retain(std::span<const NamedParameter> params) {
    std::set<std::string> keep;
    for (const auto& p : params) keep.insert(p.name);
    std::erase_if(velocity_, [&](const auto& kv) { return !keep.contains(kv.first); });
}

void Adam::step(std::span<const NamedParameter> params, const FreezeMasks& trainable) {
    for (const auto& p : params) {
        Var var = p.var;
        if (var.grad().empty()) continue;
        Tensor& w = var.mutable_value();
        const Tensor& g = var.grad();
        auto mask_it = trainable.find(p.name);
        const std::vector<std::uint8_t>* mask = mask_it == trainable.end() ? nullptr : &mask_it->second;
        if (mask && std::int64_t(mask->size()) != w.numel()) throw StateError("mask size mismatch for " + p.name);
        Slot& s = slots_[p.name];
        if (s.m.empty()) {
            s.m = Tensor(w.shape());
            s.v = Tensor(w.shape());
        }
        if (!(s.m.shape() == w.shape())) throw StateError("optimizer state shape changed for " + p.name);
        ++s.step;
        const double c1 = 1.0 - std::pow(beta1_, double(s.step));
        const double c2 = 1.0 - std::pow(beta2_, double(s.step));
        for (std::int64_t i = 0; i < w.numel(); ++i) {
            if (mask && !(*mask)[std::size_t(i)]) continue;
            const Real d = g[i] + decay_ * w[i];
            s.m[i] = beta1_ * s.m[i] + (1 - beta1_) * d;
            s.v[i] = beta2_ * s.v[i] + (1 - beta2_) * d * d;
            w[i] -= lr_ * (s.m[i] / c1) / (std::sqrt(s.v[i] / c2) + eps_);
        }
    }
}

}  // namespace nasdet
