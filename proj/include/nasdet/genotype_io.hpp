#pragma once

#include <string>
#include <string_view>

#include "nasdet/genotype.hpp"

namespace nasdet {

inline constexpr int kGenotypeFormat = 1;
inline constexpr std::string_view kGenotypeExtension = ".genotype";

/// Versioned text form. Pairs are written as "[source, Op_name]" with the
/// table's operation names. Throws GenotypeError on a malformed genotype.
std::string serialize_genotype(const Genotype& g);

/// Inverse of serialize_genotype. Throws ParseError naming the line.
Genotype parse_genotype(std::string_view doc);

/// Human-readable listing of both cells, one edge per line.
std::string render_genotype(const Genotype& g);
/// Graphviz description of both cells.
std::string genotype_dot(const Genotype& g);

}  // namespace nasdet
