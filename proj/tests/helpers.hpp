#pragma once

#include <stdexcept>
#include <string>

#include "nasdet/module.hpp"
#include "nasdet/rng.hpp"
#include "nasdet/tensor.hpp"

namespace nasdet::testing {

inline Tensor random_tensor(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(s);
    for (auto& v : t.values()) v = rng.uniform(lo, hi);
    return t;
}

inline Tensor iota_tensor(Shape s, double start = 1.0) {
    Tensor t(s);
    for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = start + double(i);
    return t;
}

inline Var find_param(const Module& m, const std::string& name) {
    for (const auto& p : m.named_parameters())
        if (p.name == name) return p.var;
    throw std::out_of_range("no parameter " + name);
}

/// Channel block [c0, c0 + count) of image n.
inline Tensor channel_block(const Tensor& t, int n, int c0, int count) {
    const Shape s = t.shape();
    Tensor out({1, count, s.h, s.w});
    for (int c = 0; c < count; ++c)
        for (std::int64_t i = 0; i < s.plane(); ++i) out.plane(0, c)[i] = t.plane(n, c0 + c)[i];
    return out;
}

}  // namespace nasdet::testing
