#include "nasdet/dataset.hpp"

#include <algorithm>
#include <cstring>

#include "nasdet/errors.hpp"
#include "nasdet/rng.hpp"

namespace nasdet {

Batch make_batch(const Dataset& data, std::span<const std::size_t> indices) {
    if (indices.empty()) throw DataError("empty batch");
    const Sample& first = data.at(indices[0]);
    const Shape is = first.image.shape();
    const Shape ms = first.mask.shape();
    const int n = int(indices.size());
    Batch b{Tensor::uninitialized({n, is.c, is.h, is.w}), Tensor::uninitialized({n, 1, ms.h, ms.w})};
    for (int i = 0; i < n; ++i) {
        const Sample& s = data.at(indices[std::size_t(i)]);
        if (!(s.image.shape() == is) || !(s.mask.shape() == ms)) {
            throw DataError("sample " + s.id + " has shape " + to_string(s.image.shape()) + ", expected " +
                            to_string(is));
        }
        std::copy_n(s.image.data(), is.numel(), b.images.plane(i, 0));
        std::copy_n(s.mask.data(), ms.numel(), b.masks.plane(i, 0));
    }
    return b;
}

std::vector<std::vector<std::size_t>> chunk(std::span<const std::size_t> order, int batch_size) {
    if (batch_size < 1) throw ConfigError("batch size must be positive");
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t i = 0; i < order.size(); i += std::size_t(batch_size)) {
        const std::size_t end = std::min(order.size(), i + std::size_t(batch_size));
        out.emplace_back(order.begin() + std::ptrdiff_t(i), order.begin() + std::ptrdiff_t(end));
    }
    return out;
}

std::vector<std::size_t> permutation(std::size_t n, std::uint64_t seed) {
    std::vector<std::size_t> p(n);
    for (std::size_t i = 0; i < n; ++i) p[i] = i;
    std::uint64_t state = seed;
    for (std::size_t i = n; i > 1; --i) {
        // splitmix64 step; modulo bias is irrelevant at these sizes
        state += 0x9e3779b97f4a7c15ULL;
        std::uint64_t z = state;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        z ^= z >> 31;
        std::swap(p[i - 1], p[std::size_t(z % i)]);
    }
    return p;
}

std::uint64_t dataset_digest(const Dataset& data) {
    std::uint64_t h = fnv1a("dataset");
    auto mix = [&](const void* bytes, std::size_t n) {
        h = fnv1a(std::string_view(static_cast<const char*>(bytes), n), h);
    };
    for (const auto& s : data) {
        mix(s.id.data(), s.id.size());
        mix(s.image.data(), std::size_t(s.image.numel()) * sizeof(Real));
        mix(s.mask.data(), std::size_t(s.mask.numel()) * sizeof(Real));
    }
    return h;
}

}  // namespace nasdet
