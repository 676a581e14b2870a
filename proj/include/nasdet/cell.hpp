#pragma once

#include <memory>
#include <span>
#include <vector>

#include "nasdet/genotype.hpp"
#include "nasdet/module.hpp"
#include "nasdet/ops.hpp"

namespace nasdet {

enum class CellType { Normal, Reduction };

/// Edges into intermediate node j come from every node i < j.
constexpr int edge_count(int n_intermediate) {
    int n = 0;
    for (int j = 0; j < n_intermediate; ++j) n += kCellInputs + j;
    return n;
}

/// Position of edge (source, target) in the flattened edge list.
int edge_index(int source, int target);

struct EdgeState {
    int source = 0;
    int target = 0;
    int stride = 1;
    std::vector<OpKind> alive;
    std::vector<std::shared_ptr<CandidateOp>> ops;  // parallel to alive
};

struct CellSpec {
    CellType type = CellType::Normal;
    int prev_prev_channels = 0;
    int prev_channels = 0;
    int width = 0;
    int n_intermediate = 4;
    bool reduction_prev = false;  // C_{k-2} is at twice the resolution of C_{k-1}
    OpOptions options;

    int output_channels() const { return width * n_intermediate; }
};

/// Softmax over the alive ops of an edge, then the weighted sum of their
/// outputs. `logits` is 1 x |alive| x 1 x 1.
Var mixed_edge_forward(const Var& x, EdgeState& edge, const Var& logits);

/// Element-wise sum; throws ShapeError on mismatched maps.
Var node_aggregate(std::span<const Var> incoming);

/// Input preprocessing and the residual projection shared by both cell forms.
class CellBase : public Module {
public:
    const CellSpec& spec() const { return spec_; }

protected:
    CellBase(const CellSpec& spec, std::uint64_t seed);
    CellBase(const CellBase& shared_from);

    /// Returns (preprocessed C_{k-1}, preprocessed C_{k-2}).
    std::pair<Var, Var> preprocess(const Var& c_prev_prev, const Var& c_prev);
    /// Concatenates the intermediates and adds res(C_{k-1}).
    Var finish(std::span<const Var> intermediates, const Var& c_prev);
    int edge_stride(int source) const;

    CellSpec spec_;

private:
    std::shared_ptr<UnaryModule> pre_prev_, pre_prev_prev_;
    std::shared_ptr<ConvNorm> res_;
};

class MixedCell : public CellBase {
public:
    /// All 11 operations alive on every edge.
    MixedCell(const CellSpec& spec, std::uint64_t seed);

    /// One logits vector per edge, in edge_index order.
    Var forward(const Var& c_prev_prev, const Var& c_prev, std::span<const Var> logits);

    std::vector<EdgeState>& edges() { return edges_; }
    const std::vector<EdgeState>& edges() const { return edges_; }

    /// Keeps only `keep` (a subset of the alive ops) on an edge and drops the
    /// parameters of the others.
    void retain(int edge, const std::vector<OpKind>& keep);

private:
    std::vector<EdgeState> edges_;
};

class DiscreteCell : public CellBase {
public:
    /// Fresh parameters.
    DiscreteCell(const CellSpec& spec, const CellGenotype& genotype, std::uint64_t seed);
    /// Reuses preprocessing, residual and op modules of `mixed`. Every chosen op
    /// must still be alive on its edge.
    DiscreteCell(const MixedCell& mixed, const CellGenotype& genotype);

    Var forward(const Var& c_prev_prev, const Var& c_prev);

    const CellGenotype& genotype() const { return genotype_; }

private:
    void add_op(int node, int slot, std::shared_ptr<CandidateOp> op);

    CellGenotype genotype_;
    std::vector<std::array<std::shared_ptr<CandidateOp>, 2>> ops_;
};

}  // namespace nasdet
