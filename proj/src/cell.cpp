#include "nasdet/cell.hpp"

#include <algorithm>
#include <string>

#include "nasdet/errors.hpp"
#include "nasdet/rng.hpp"

namespace nasdet {

int edge_index(int source, int target) {
    if (target < kCellInputs || source < 0 || source >= target) {
        throw ShapeError("no edge " + std::to_string(source) + "->" + std::to_string(target));
    }
    return edge_count(target - kCellInputs) + source;
}

Var mixed_edge_forward(const Var& x, EdgeState& edge, const Var& logits) {
    if (logits.shape().numel() != std::int64_t(edge.alive.size()) || edge.ops.size() != edge.alive.size()) {
        throw ShapeError("edge " + std::to_string(edge.source) + "->" + std::to_string(edge.target) + " has " +
                         std::to_string(edge.alive.size()) + " alive ops but " +
                         std::to_string(logits.shape().numel()) + " logits");
    }
    if (edge.alive.size() == 1) {
        // softmax of a single logit is exactly 1
        return edge.ops[0]->apply(x);
    }
    const Var w = fn::softmax(logits);
    std::vector<Var> outs;
    outs.reserve(edge.ops.size());
    for (auto& op : edge.ops) outs.push_back(op->apply(x));
    return fn::mix(w, outs);
}

Var node_aggregate(std::span<const Var> incoming) {
    if (incoming.empty()) throw ShapeError("node has no inbound maps");
    if (incoming.size() == 1) return incoming[0];
    return fn::add_n(incoming);
}

// ---------------------------------------------------------------------------

CellBase::CellBase(const CellSpec& spec, std::uint64_t seed) : spec_(spec) {
    if (spec.width < 1 || spec.prev_channels < 1 || spec.prev_prev_channels < 1 || spec.n_intermediate < 1) {
        throw ConfigError("cell widths and node count must be positive");
    }
    const bool track = spec.options.track_running_stats;
    Rng rng(seed, "preprocess");
    pre_prev_ = register_module<UnaryModule>("pre0", std::make_shared<ReluConvNorm>(spec.prev_channels, spec.width, track, rng));
    if (spec.reduction_prev) {
        pre_prev_prev_ = register_module<UnaryModule>(
            "pre1", std::make_shared<FactorizedReduce>(spec.prev_prev_channels, spec.width, track, rng));
    } else {
        pre_prev_prev_ = register_module<UnaryModule>(
            "pre1", std::make_shared<ReluConvNorm>(spec.prev_prev_channels, spec.width, track, rng));
    }
    const int stride = spec.type == CellType::Reduction ? 2 : 1;
    Rng res_rng(seed, "residual");
    res_ = register_module("res", std::make_shared<ConvNorm>(spec.prev_channels, spec.output_channels(), stride,
                                                             track, res_rng));
}

CellBase::CellBase(const CellBase& other)
    : Module(), spec_(other.spec_), pre_prev_(other.pre_prev_), pre_prev_prev_(other.pre_prev_prev_), res_(other.res_) {
    register_module("pre0", pre_prev_);
    register_module("pre1", pre_prev_prev_);
    register_module("res", res_);
}

std::pair<Var, Var> CellBase::preprocess(const Var& c_prev_prev, const Var& c_prev) {
    Var p0 = pre_prev_->forward(c_prev);
    Var p1 = pre_prev_prev_->forward(c_prev_prev);
    if (!(p0.shape() == p1.shape())) {
        throw ShapeError("cell inputs disagree after preprocessing: " + to_string(p0.shape()) + " vs " +
                         to_string(p1.shape()));
    }
    return {p0, p1};
}

Var CellBase::finish(std::span<const Var> intermediates, const Var& c_prev) {
    const Var cat = fn::concat_channels(intermediates);
    const Var res = res_->forward(c_prev);
    if (!(cat.shape() == res.shape())) {
        throw ShapeError("cell output " + to_string(cat.shape()) + " does not match residual " + to_string(res.shape()));
    }
    return fn::add(cat, res);
}

int CellBase::edge_stride(int source) const {
    return (spec_.type == CellType::Reduction && source < kCellInputs) ? 2 : 1;
}

// ---------------------------------------------------------------------------

MixedCell::MixedCell(const CellSpec& spec, std::uint64_t seed) : CellBase(spec, seed) {
    for (int j = kCellInputs; j < kCellInputs + spec.n_intermediate; ++j) {
        for (int i = 0; i < j; ++i) {
            EdgeState e;
            e.source = i;
            e.target = j;
            e.stride = edge_stride(i);
            const int idx = int(edges_.size());
            const std::uint64_t edge_seed = derive_seed(seed, "edge", std::uint64_t(idx));
            for (OpKind k : kAllOps) {
                e.alive.push_back(k);
                e.ops.push_back(register_module("edge" + std::to_string(idx) + "." + std::string(op_name(k)),
                                                make_candidate(k, spec.width, e.stride, edge_seed, spec.options)));
            }
            edges_.push_back(std::move(e));
        }
    }
}

Var MixedCell::forward(const Var& c_prev_prev, const Var& c_prev, std::span<const Var> logits) {
    if (logits.size() != edges_.size()) {
        throw ShapeError("cell has " + std::to_string(edges_.size()) + " edges but got " +
                         std::to_string(logits.size()) + " logit vectors");
    }
    fn::ReluMemo memo;
    auto [p0, p1] = preprocess(c_prev_prev, c_prev);
    std::vector<Var> nodes{p0, p1};
    std::vector<Var> inbound;
    std::size_t e = 0;
    for (int j = kCellInputs; j < kCellInputs + spec_.n_intermediate; ++j) {
        inbound.clear();
        for (int i = 0; i < j; ++i, ++e) inbound.push_back(mixed_edge_forward(nodes[std::size_t(i)], edges_[e], logits[e]));
        nodes.push_back(node_aggregate(inbound));
    }
    return finish(std::span<const Var>(nodes).subspan(kCellInputs), c_prev);
}

void MixedCell::retain(int edge, const std::vector<OpKind>& keep) {
    EdgeState& e = edges_.at(std::size_t(edge));
    if (keep.empty()) throw ScheduleError("an edge must keep at least one op");
    for (OpKind k : keep) {
        if (std::find(e.alive.begin(), e.alive.end(), k) == e.alive.end()) {
            throw ScheduleError(std::string(op_name(k)) + " is not alive on edge " + std::to_string(edge));
        }
    }
    EdgeState next{e.source, e.target, e.stride, {}, {}};
    for (std::size_t i = 0; i < e.alive.size(); ++i) {
        if (std::find(keep.begin(), keep.end(), e.alive[i]) != keep.end()) {
            next.alive.push_back(e.alive[i]);
            next.ops.push_back(e.ops[i]);
        } else {
            unregister_module("edge" + std::to_string(edge) + "." + std::string(op_name(e.alive[i])));
        }
    }
    e = std::move(next);
}

// ---------------------------------------------------------------------------

DiscreteCell::DiscreteCell(const CellSpec& spec, const CellGenotype& genotype, std::uint64_t seed)
    : CellBase(spec, seed), genotype_(genotype) {
    validate(genotype, spec.n_intermediate);
    ops_.resize(genotype.nodes.size());
    for (std::size_t n = 0; n < genotype.nodes.size(); ++n) {
        const int node = int(n) + kCellInputs;
        for (int slot = 0; slot < 2; ++slot) {
            const GenePair& p = genotype.nodes[n][std::size_t(slot)];
            const std::uint64_t s = derive_seed(seed, "edge", std::uint64_t(edge_index(p.source, node)));
            add_op(node, slot, make_candidate(p.op, spec.width, edge_stride(p.source), s, spec.options));
        }
    }
}

DiscreteCell::DiscreteCell(const MixedCell& mixed, const CellGenotype& genotype)
    : CellBase(mixed), genotype_(genotype) {
    validate(genotype, spec_.n_intermediate);
    ops_.resize(genotype.nodes.size());
    for (std::size_t n = 0; n < genotype.nodes.size(); ++n) {
        const int node = int(n) + kCellInputs;
        for (int slot = 0; slot < 2; ++slot) {
            const GenePair& p = genotype.nodes[n][std::size_t(slot)];
            const EdgeState& e = mixed.edges()[std::size_t(edge_index(p.source, node))];
            auto it = std::find(e.alive.begin(), e.alive.end(), p.op);
            if (it == e.alive.end()) {
                throw GenotypeError(std::string(op_name(p.op)) + " is not alive on edge " + std::to_string(p.source) +
                                    "->" + std::to_string(node));
            }
            add_op(node, slot, e.ops[std::size_t(it - e.alive.begin())]);
        }
    }
}

void DiscreteCell::add_op(int node, int slot, std::shared_ptr<CandidateOp> op) {
    ops_[std::size_t(node - kCellInputs)][std::size_t(slot)] =
        register_module("node" + std::to_string(node) + "_" + std::to_string(slot) + "." +
                            std::string(op_name(op->kind())),
                        op);
}

Var DiscreteCell::forward(const Var& c_prev_prev, const Var& c_prev) {
    fn::ReluMemo memo;
    auto [p0, p1] = preprocess(c_prev_prev, c_prev);
    std::vector<Var> nodes{p0, p1};
    for (std::size_t n = 0; n < genotype_.nodes.size(); ++n) {
        std::array<Var, 2> in;
        for (std::size_t slot = 0; slot < 2; ++slot) {
            const GenePair& p = genotype_.nodes[n][slot];
            in[slot] = ops_[n][slot]->apply(nodes[std::size_t(p.source)]);
        }
        nodes.push_back(node_aggregate(in));
    }
    return finish(std::span<const Var>(nodes).subspan(kCellInputs), c_prev);
}

}  // namespace nasdet
