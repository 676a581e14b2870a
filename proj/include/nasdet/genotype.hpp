#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "nasdet/ops.hpp"

namespace nasdet {

/// Nodes 0 and 1 are the cell inputs C_{k-1} and C_{k-2}; intermediate nodes
/// are numbered from 2.
inline constexpr int kCellInputs = 2;

struct GenePair {
    int source = 0;
    OpKind op = OpKind::Zero;
    bool operator==(const GenePair&) const = default;
};

/// Two inbound pairs per intermediate node, node j at index j - 2.
struct CellGenotype {
    std::vector<std::array<GenePair, 2>> nodes;
    bool operator==(const CellGenotype&) const = default;
};

struct Genotype {
    CellGenotype normal;
    CellGenotype reduction;
    std::string config_digest;
    std::uint64_t seed = 0;
    std::vector<int> schedule;
    bool operator==(const Genotype&) const = default;
};

/// Throws GenotypeError unless every node has two pairs with distinct sources
/// that precede it.
void validate(const CellGenotype& cell, int n_intermediate);
void validate(const Genotype& g, int n_intermediate);

/// Every node takes the same two pairs; handy for tests and smoke runs.
CellGenotype uniform_cell(int n_intermediate, GenePair a, GenePair b);

}  // namespace nasdet
