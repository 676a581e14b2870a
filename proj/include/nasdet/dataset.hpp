#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "nasdet/tensor.hpp"

namespace nasdet {

/// One image with its binary mask. `image` is 1 x C x H x W in [0,1], `mask`
/// is 1 x 1 x H x W with values in {0,1}.
struct Sample {
    Tensor image;
    Tensor mask;
    std::string id;
};

using Dataset = std::vector<Sample>;

/// Stacks the selected samples into N x C x H x W images and N x 1 x H x W
/// masks. Throws DataError on mixed shapes.
struct Batch {
    Tensor images;
    Tensor masks;
};
Batch make_batch(const Dataset& data, std::span<const std::size_t> indices);

/// Consecutive chunks of `order` of at most `batch_size` entries.
std::vector<std::vector<std::size_t>> chunk(std::span<const std::size_t> order, int batch_size);

/// Deterministic Fisher-Yates permutation of 0..n-1.
std::vector<std::size_t> permutation(std::size_t n, std::uint64_t seed);

/// Order-sensitive digest of images, masks and ids.
std::uint64_t dataset_digest(const Dataset& data);

}  // namespace nasdet
