#include "nasdet/arch.hpp"

#include <algorithm>
#include <string>

#include "nasdet/errors.hpp"
#include "nasdet/rng.hpp"

namespace nasdet {

ArchWeights::ArchWeights(int n_intermediate, std::uint64_t seed, double init_scale) : n_intermediate_(n_intermediate) {
    if (n_intermediate < 1) throw ConfigError("cells need at least one intermediate node");
    for (CellType t : {CellType::Normal, CellType::Reduction}) {
        Rng rng(seed, t == CellType::Normal ? "arch.normal" : "arch.reduction");
        auto& list = edges(t);
        for (int e = 0; e < edge_count(n_intermediate); ++e) {
            EdgeArch a;
            a.alive.assign(kAllOps.begin(), kAllOps.end());
            Tensor v({1, kNumOps, 1, 1});
            for (auto& x : v.values()) x = rng.normal(0.0, init_scale);
            a.logits = leaf_parameter(std::move(v));
            list.push_back(std::move(a));
        }
    }
}

bool EdgeArch::is_alive(OpKind k) const { return std::find(alive.begin(), alive.end(), k) != alive.end(); }

Var EdgeArch::alive_logits() const {
    if (int(alive.size()) == kNumOps) return logits;
    std::vector<int> idx;
    for (OpKind k : alive) idx.push_back(op_id(k) - 1);
    return fn::gather_channels(logits, idx);
}

std::vector<Var> ArchWeights::alive_logits(CellType t) const {
    std::vector<Var> out;
    for (const auto& e : edges(t)) out.push_back(e.alive_logits());
    return out;
}

std::vector<NamedParameter> ArchWeights::named_parameters() const {
    std::vector<NamedParameter> out;
    for (std::size_t i = 0; i < normal_.size(); ++i) out.push_back({"normal." + std::to_string(i), normal_[i].logits});
    for (std::size_t i = 0; i < reduction_.size(); ++i) {
        out.push_back({"reduction." + std::to_string(i), reduction_[i].logits});
    }
    return out;
}

void ArchWeights::set_requires_grad(bool on) {
    for (auto& p : named_parameters()) p.var.node()->requires_grad = on;
}

void ArchWeights::zero_grad() {
    for (auto& p : named_parameters()) p.var.zero_grad();
}

std::pair<int, int> ArchWeights::alive_range() const {
    int lo = kNumOps, hi = 0;
    for (const auto* list : {&normal_, &reduction_})
        for (const auto& e : *list) {
            lo = std::min(lo, int(e.alive.size()));
            hi = std::max(hi, int(e.alive.size()));
        }
    return {lo, hi};
}

ArchWeights ArchWeights::clone() const {
    ArchWeights c;
    c.n_intermediate_ = n_intermediate_;
    for (CellType t : {CellType::Normal, CellType::Reduction}) {
        for (const auto& e : edges(t)) {
            Var v = leaf_parameter(e.logits.value());
            v.node()->requires_grad = e.logits.requires_grad();
            c.edges(t).push_back({e.alive, v});
        }
    }
    return c;
}

}  // namespace nasdet
