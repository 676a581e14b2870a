#include "nasdet/search.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "nasdet/errors.hpp"
#include "nasdet/rng.hpp"

namespace nasdet {

void SearchConfig::validate() const {
    network.validate();
    if (schedule.empty()) throw ConfigError("schedule must not be empty");
    int prev = kNumOps + 1;
    for (int k : schedule) {
        if (k < 1 || k >= prev) throw ConfigError("schedule must be strictly decreasing within 1..11");
        prev = k;
    }
    if (schedule.back() != 1) throw ConfigError("schedule must end at 1");
    if (epochs_per_stage < 1) throw ConfigError("epochs per stage must be positive");
    if (warmup_epochs < 0 || warmup_epochs > epochs_per_stage) throw ConfigError("warm-up must fit in a stage");
    if (batch_size < 1) throw ConfigError("batch size must be positive");
    if (!(arch_fraction > 0 && arch_fraction < 1)) throw ConfigError("architecture fraction must lie in (0,1)");
}

std::vector<int> SearchConfig::effective_schedule() const { return staged ? schedule : std::vector<int>{1}; }

LossOptions SearchConfig::loss_options() const {
    LossOptions o;
    o.deep_supervision = deep_supervision;
    o.branches = network.levels();
    return o;
}

std::vector<int> alive_counts(const ArchWeights& arch) {
    std::vector<int> out;
    for (CellType t : {CellType::Normal, CellType::Reduction})
        for (const auto& e : arch.edges(t)) out.push_back(int(e.alive.size()));
    return out;
}

SearchState init_search(const SearchConfig& cfg, const Dataset& data, std::uint64_t seed) {
    cfg.validate();
    if (data.empty()) throw DataError("search needs a non-empty training split");
    SearchState s;
    s.cfg = cfg;
    s.seed = seed;
    s.supernet = build_supernet(cfg.network, derive_seed(seed, "init"));
    s.weight_opt = Sgd(cfg.weight_lr, cfg.weight_momentum, cfg.weight_decay);
    s.arch_opt = Adam(cfg.arch_lr, cfg.arch_beta1, cfg.arch_beta2, 1e-8, cfg.arch_decay);
    const auto order = permutation(data.size(), derive_seed(seed, "split"));
    const auto n_arch = std::size_t(std::llround(cfg.arch_fraction * double(data.size())));
    s.arch_split.assign(order.begin(), order.begin() + std::ptrdiff_t(n_arch));
    s.weight_split.assign(order.begin() + std::ptrdiff_t(n_arch), order.end());
    if (s.arch_split.empty() || s.weight_split.empty()) {
        throw DataError("training set of " + std::to_string(data.size()) + " samples is too small to split");
    }
    s.alive_history.push_back(alive_counts(s.supernet->arch()));
    return s;
}

namespace {

FreezeMasks arch_masks(const ArchWeights& arch) {
    FreezeMasks m;
    for (const auto& p : arch.named_parameters()) {
        const bool normal = p.name.starts_with("normal.");
        const auto& edges = arch.edges(normal ? CellType::Normal : CellType::Reduction);
        const auto& e = edges[std::stoul(p.name.substr(p.name.find('.') + 1))];
        std::vector<std::uint8_t> mask(kNumOps, 0);
        for (OpKind k : e.alive) mask[std::size_t(op_id(k) - 1)] = 1;
        m.emplace(p.name, std::move(mask));
    }
    return m;
}

struct Running {
    double out = 0, bra = 0, total = 0;
    int n = 0;
    void add(const LossBundle& b) {
        out += b.loss_out;
        bra += b.loss_bra;
        total += b.loss_total;
        ++n;
    }
};

EpochRecord make_record(const SearchState& s, const std::string& split, const Running& r) {
    EpochRecord rec;
    rec.stage = s.stage;
    rec.epoch = s.epoch;
    rec.split = split;
    if (r.n > 0) {
        rec.loss_out = r.out / r.n;
        rec.loss_bra = r.bra / r.n;
        rec.loss_total = r.total / r.n;
    }
    const auto [lo, hi] = s.supernet->arch().alive_range();
    rec.alive_min = lo;
    rec.alive_max = hi;
    return rec;
}

std::vector<std::vector<std::size_t>> epoch_batches(const SearchState& s, const std::vector<std::size_t>& split,
                                                    int which) {
    const std::uint64_t key = std::uint64_t(s.stage) * 1000003ULL + std::uint64_t(s.epoch) * 2 + std::uint64_t(which);
    const auto perm = permutation(split.size(), derive_seed(s.seed, "batches", key));
    std::vector<std::size_t> order;
    order.reserve(split.size());
    for (std::size_t i : perm) order.push_back(split[i]);
    return chunk(order, s.cfg.batch_size);
}

LossBundle forward_loss(SearchState& s, const Dataset& data, const std::vector<std::size_t>& batch,
                        const char* split) {
    const Batch b = make_batch(data, batch);
    auto out = s.supernet->forward(constant(b.images));
    LossBundle loss = total_loss(out, b.masks, s.cfg.loss_options());
    if (!std::isfinite(loss.loss_total)) {
        throw DivergenceError("non-finite loss in stage " + std::to_string(s.stage) + " epoch " +
                              std::to_string(s.epoch) + " on the " + split + " split (loss_out " +
                              std::to_string(loss.loss_out) + ", loss_bra " + std::to_string(loss.loss_bra) + ")");
    }
    if (s.cfg.check_losses) check_composition(loss);
    return loss;
}

LossBundle weight_step(SearchState& s, const Dataset& data, const std::vector<std::size_t>& batch) {
    Supernet& net = *s.supernet;
    net.arch().set_requires_grad(false);
    net.set_requires_grad(true);
    net.zero_grad();
    LossBundle loss = forward_loss(s, data, batch, "weight");
    backward(loss.total);
    const auto params = net.named_parameters();
    s.weight_opt.step(params);
    net.zero_grad();
    return loss;
}

LossBundle arch_step(SearchState& s, const Dataset& data, const std::vector<std::size_t>& batch) {
    Supernet& net = *s.supernet;
    net.set_requires_grad(false);
    net.arch().set_requires_grad(true);
    net.arch().zero_grad();
    LossBundle loss = forward_loss(s, data, batch, "arch");
    backward(loss.total);
    const auto params = net.arch().named_parameters();
    s.arch_opt.step(params, arch_masks(net.arch()));
    net.arch().zero_grad();
    net.set_requires_grad(true);
    return loss;
}

}  // namespace

EpochRecord warmup_epoch(SearchState& s, const Dataset& data) {
    s.supernet->set_training(true);
    Running r;
    for (const auto& batch : epoch_batches(s, s.weight_split, 0)) r.add(weight_step(s, data, batch));
    return make_record(s, "weight", r);
}

std::pair<EpochRecord, EpochRecord> bilevel_epoch(SearchState& s, const Dataset& data) {
    s.supernet->set_training(true);
    const auto wb = epoch_batches(s, s.weight_split, 0);
    const auto ab = epoch_batches(s, s.arch_split, 1);
    Running rw, ra;
    for (std::size_t i = 0; i < std::max(wb.size(), ab.size()); ++i) {
        if (i < wb.size()) rw.add(weight_step(s, data, wb[i]));
        if (i < ab.size()) ra.add(arch_step(s, data, ab[i]));
    }
    return {make_record(s, "weight", rw), make_record(s, "arch", ra)};
}

ArchWeights prune_edges(const ArchWeights& arch, int top_k) {
    if (top_k < 1) throw ScheduleError("top_k must be at least 1");
    ArchWeights out = arch.clone();
    for (CellType t : {CellType::Normal, CellType::Reduction}) {
        for (auto& e : out.edges(t)) {
            if (top_k > int(e.alive.size())) {
                throw ScheduleError("cannot keep " + std::to_string(top_k) + " of " + std::to_string(e.alive.size()) +
                                    " alive ops");
            }
            const Tensor& v = e.logits.value();
            std::vector<OpKind> ranked = e.alive;
            std::stable_sort(ranked.begin(), ranked.end(), [&](OpKind a, OpKind b) {
                const Real la = v[op_id(a) - 1], lb = v[op_id(b) - 1];
                if (la != lb) return la > lb;
                return op_id(a) < op_id(b);
            });
            ranked.resize(std::size_t(top_k));
            std::sort(ranked.begin(), ranked.end(), [](OpKind a, OpKind b) { return op_id(a) < op_id(b); });
            e.alive = std::move(ranked);
        }
    }
    return out;
}

double edge_strength(const EdgeArch& edge) {
    if (edge.alive.size() != 1) {
        throw StateError("edge has " + std::to_string(edge.alive.size()) + " alive ops; decoding needs exactly 1");
    }
    const Tensor& v = edge.logits.value();
    Real mx = v[0];
    for (int k = 1; k < kNumOps; ++k) mx = std::max(mx, v[k]);
    Real z = 0;
    for (int k = 0; k < kNumOps; ++k) z += std::exp(v[k] - mx);
    return std::exp(v[op_id(edge.alive[0]) - 1] - mx) / z;
}

CellGenotype decode_cell(const std::vector<EdgeArch>& edges, int n_intermediate) {
    if (int(edges.size()) != edge_count(n_intermediate)) throw StateError("edge count does not match node count");
    CellGenotype g;
    for (int j = kCellInputs; j < kCellInputs + n_intermediate; ++j) {
        struct Cand {
            int source;
            OpKind op;
            double score;
        };
        std::vector<Cand> live, zero;
        for (int i = 0; i < j; ++i) {
            const EdgeArch& e = edges[std::size_t(edge_index(i, j))];
            const Cand c{i, e.alive.empty() ? OpKind::Zero : e.alive[0], edge_strength(e)};
            (c.op == OpKind::Zero ? zero : live).push_back(c);
        }
        auto by_rank = [](const Cand& a, const Cand& b) {
            if (a.score != b.score) return a.score > b.score;
            return a.source < b.source;
        };
        std::sort(live.begin(), live.end(), by_rank);
        std::sort(zero.begin(), zero.end(), by_rank);
        live.insert(live.end(), zero.begin(), zero.end());
        g.nodes.push_back({GenePair{live[0].source, live[0].op}, GenePair{live[1].source, live[1].op}});
    }
    return g;
}

Genotype decode_genotype(const ArchWeights& arch) {
    Genotype g;
    g.normal = decode_cell(arch.edges(CellType::Normal), arch.n_intermediate());
    g.reduction = decode_cell(arch.edges(CellType::Reduction), arch.n_intermediate());
    return g;
}

Genotype run_search(const SearchConfig& cfg, const Dataset& data, std::uint64_t seed, const SearchHooks& hooks,
                    SearchState* state) {
    SearchState local;
    SearchState& s = state ? *state : local;
    if (!s.supernet) s = init_search(cfg, data, seed);
    const auto schedule = s.cfg.effective_schedule();
    while (s.stage < int(schedule.size())) {
        while (s.epoch < s.cfg.epochs_per_stage) {
            if (s.epoch < s.cfg.warmup_epochs) {
                const auto rec = warmup_epoch(s, data);
                if (hooks.on_epoch) hooks.on_epoch(rec);
            } else {
                const auto [rw, ra] = bilevel_epoch(s, data);
                if (hooks.on_epoch) {
                    hooks.on_epoch(rw);
                    hooks.on_epoch(ra);
                }
            }
            ++s.epoch;
            if (hooks.on_checkpoint) hooks.on_checkpoint(s);
        }
        s.supernet->set_arch(prune_edges(s.supernet->arch(), schedule[std::size_t(s.stage)]));
        const auto params = s.supernet->named_parameters();
        s.weight_opt.retain(params);
        s.alive_history.push_back(alive_counts(s.supernet->arch()));
        ++s.stage;
        s.epoch = 0;
        if (hooks.on_checkpoint) hooks.on_checkpoint(s);
    }
    Genotype g = decode_genotype(s.supernet->arch());
    g.seed = s.seed;
    g.schedule = schedule;
    return g;
}

}  // namespace nasdet
