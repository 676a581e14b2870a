#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "nasdet/cell.hpp"

namespace nasdet {

/// Logits of one edge over all 11 ops, shaped 1 x 11 x 1 x 1 and indexed by
/// op id - 1. Entries of pruned ops keep their last value and are masked out
/// of the mixing softmax.
struct EdgeArch {
    std::vector<OpKind> alive;  // ascending op id
    Var logits;

    bool is_alive(OpKind k) const;
    /// Logits of the alive ops, in alive order, as a differentiable slice.
    Var alive_logits() const;
};

/// Architecture logits, shared by every cell of the same type.
class ArchWeights {
public:
    ArchWeights() = default;
    /// All ops alive; logits drawn from N(0, init_scale^2).
    ArchWeights(int n_intermediate, std::uint64_t seed, double init_scale = 1e-3);

    int n_intermediate() const { return n_intermediate_; }
    std::vector<EdgeArch>& edges(CellType t) { return t == CellType::Normal ? normal_ : reduction_; }
    const std::vector<EdgeArch>& edges(CellType t) const { return t == CellType::Normal ? normal_ : reduction_; }
    /// alive_logits() of every edge of a cell type.
    std::vector<Var> alive_logits(CellType t) const;

    /// Names look like "normal.3" (edge index 3 of the normal cell).
    std::vector<NamedParameter> named_parameters() const;
    void set_requires_grad(bool on);
    void zero_grad();

    /// Smallest and largest alive count over all edges.
    std::pair<int, int> alive_range() const;

    /// Deep copy: the result owns new logit leaves.
    ArchWeights clone() const;

private:
    int n_intermediate_ = 0;
    std::vector<EdgeArch> normal_, reduction_;
};

}  // namespace nasdet
