#pragma once

#include <filesystem>
#include <string_view>

#include "nasdet/dataset.hpp"

namespace nasdet {

struct LoadOptions {
    int channels = 1;  // images are converted to this many channels
    int height = 0;    // 0 keeps the stored size
    int width = 0;
};

/// Reads <root>/<split>/{images,masks}/<stem>.* in lexicographic stem order.
/// Masks are binarized at 0.5. Throws DataError on an empty folder or a stem
/// without a partner.
Dataset load_dataset(const std::filesystem::path& root, std::string_view split, const LoadOptions& options = {});

/// Writes a 1 x 1 x H x W map in [0,1] as an 8-bit grayscale PNG.
void write_gray_png(const std::filesystem::path& path, const Tensor& map);
/// Writes a binary map as a {0,255} PNG.
void write_mask_png(const std::filesystem::path& path, const Tensor& map, double threshold = 0.5);

}  // namespace nasdet
