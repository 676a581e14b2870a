#pragma once

#include <cstdint>
#include <filesystem>
#include <string_view>
#include <vector>

#include "nasdet/dataset.hpp"

namespace nasdet {

enum class DefectKind { Scratch, Blob, Crack };

std::string_view defect_name(DefectKind k);
/// Throws ConfigError on an unknown name.
DefectKind defect_from_name(std::string_view name);

struct SynthSpec {
    int height = 64;
    int width = 64;
    int channels = 1;
    int n_train = 200;
    int n_test = 50;
    std::vector<DefectKind> kinds{DefectKind::Scratch, DefectKind::Blob, DefectKind::Crack};
    double contrast_lo = 0.1;  // |defect - background| intensity range
    double contrast_hi = 0.3;
    double texture_scale = 12.0;     // wavelength of the background pattern, pixels
    double texture_strength = 0.04;  // amplitude of the background pattern
    double noise = 0.01;             // std-dev of additive pixel noise
    std::uint64_t seed = 0;

    /// Throws ConfigError.
    void validate() const;
};

/// Renders sample `index` of a split ("train" or "test"). Intensities are in
/// [0,1]; the mask is never empty. Pure function of (spec, split, index).
Sample render_sample(const SynthSpec& spec, std::string_view split, int index);

/// Writes <root>/{train,test}/{images,masks}/<stem>.png with 8-bit images
/// and {0,255} masks. Byte-identical for identical specs. Throws IoError.
void generate_synthetic_dataset(const SynthSpec& spec, const std::filesystem::path& root);

}  // namespace nasdet
