// Acceptance run: one PASS/FAIL line per criterion. Pass criterion numbers to
// run a subset, e.g. `nasdet_acceptance 1 2 3`.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <optional>
#include <set>
#include <sstream>
#include <string>

#include "gradcheck.hpp"
#include "helpers.hpp"
#include "nasdet/genotype_io.hpp"
#include "nasdet/image_io.hpp"
#include "nasdet/report.hpp"
#include "nasdet/run.hpp"
#include "nasdet/synth.hpp"
#include "tempdir.hpp"

using namespace nasdet;
using nasdet::testing::random_tensor;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string num(double v, int digits = 4) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*g", digits, v);
    return buf;
}

ArchWeights random_arch(Rng& rng, double spread = 2.0) {
    ArchWeights a(4, rng.engine()());
    for (CellType t : {CellType::Normal, CellType::Reduction})
        for (auto& e : a.edges(t))
            for (auto& v : e.logits.mutable_value().values()) v = rng.uniform(-spread, spread);
    return a;
}

void drift(ArchWeights& a, Rng& rng) {
    for (CellType t : {CellType::Normal, CellType::Reduction})
        for (auto& e : a.edges(t))
            for (auto& v : e.logits.mutable_value().values()) v += rng.normal(0, 0.3);
}

// ---------------------------------------------------------------------------

Outcome relaxation_validity() {
    Rng rng(1);
    auto net = build_supernet(NetworkConfig{}, 1);
    int edges = 0;
    double worst = 0;
    bool negative = false;
    const auto check_all = [&] {
        for (const auto& cell : net->cells()) {
            const auto logits = net->arch().alive_logits(cell->spec().type);
            for (std::size_t e = 0; e < cell->edges().size(); ++e) {
                if (logits[e].shape().c != int(cell->edges()[e].alive.size())) negative = true;
                const Var weights = fn::softmax(logits[e]);
                double sum = 0;
                for (Real w : weights.value().values()) {
                    negative = negative || w < 0.0;
                    sum += w;
                }
                worst = std::max(worst, std::abs(sum - 1.0));
                ++edges;
            }
        }
    };
    check_all();
    for (double spread : {1.0, 30.0, 300.0}) {
        net = build_supernet(NetworkConfig{}, 1);
        ArchWeights a = random_arch(rng, spread);
        for (int k : SearchConfig{}.effective_schedule()) {
            net->set_arch(a.clone());
            check_all();
            a = prune_edges(a, k);
        }
        net->set_arch(a.clone());
        check_all();
    }
    return {!negative && worst <= 1e-6, std::to_string(edges) + " edges, max |sum - 1| = " + num(worst)};
}

Outcome gradient_fidelity() {
    NetworkConfig cfg;
    cfg.stem_channels = 4;
    cfg.fusion_channels = 4;
    cfg.n_normal = 1;
    cfg.n_reduction = 1;
    cfg.height = cfg.width = 16;
    auto net = build_supernet(cfg, 11);
    Rng rng(12);
    for (auto& p : net->arch().named_parameters())
        for (auto& v : p.var.mutable_value().values()) v = rng.uniform(-1, 1);
    const Tensor images = random_tensor({2, 1, 16, 16}, rng, 0, 1);
    Tensor masks({2, 1, 16, 16});
    for (std::int64_t i = 0; i < masks.numel(); ++i) masks[i] = images[i] > 0.6 ? 1.0 : 0.0;
    LossOptions opts;
    opts.branches = cfg.levels();
    const auto loss = [&] {
        const NetworkOutput out = net->forward(constant(images));
        return total_loss(out, masks, opts).total;
    };

    std::vector<testing::GradProbe> probes;
    const auto arch = net->arch().named_parameters();
    for (int i = 0; i < 20; ++i) {
        const auto& p = arch[std::size_t(rng.uniform_int(0, int(arch.size()) - 1))];
        const std::int64_t k = rng.uniform_int(0, kNumOps - 1);
        probes.push_back({p.var, k, p.name + "[" + std::to_string(k) + "]"});
    }
    const auto weights = net->named_parameters();
    for (int i = 0; i < 20; ++i) {
        const auto& p = weights[std::size_t(rng.uniform_int(0, int(weights.size()) - 1))];
        const std::int64_t k = rng.uniform_int(0, int(p.var.value().numel()) - 1);
        probes.push_back({p.var, k, p.name + "[" + std::to_string(k) + "]"});
    }
    const auto results = testing::check_gradients(loss, probes, 1e-3, 1e-2, 1e-5);
    int ok = 0;
    std::string first_bad;
    for (const auto& r : results) {
        ok += r.ok;
        if (!r.ok && first_bad.empty())
            first_bad = "; first mismatch " + r.label + " analytic " + num(r.analytic, 6) + " numeric " + num(r.numeric, 6);
    }
    return {ok == int(results.size()), std::to_string(ok) + "/" + std::to_string(results.size()) + " probes agree" + first_bad};
}

/// Rank alive ops by (logit desc, id asc) and keep the first k.
std::vector<OpKind> top_k_oracle(const EdgeArch& e, int k) {
    std::vector<std::pair<double, int>> ranked;
    for (OpKind op : e.alive) ranked.push_back({-e.logits.value()[op_id(op) - 1], op_id(op)});
    std::sort(ranked.begin(), ranked.end());
    std::vector<OpKind> out;
    for (int i = 0; i < k && i < int(ranked.size()); ++i) out.push_back(op_from_id(ranked[std::size_t(i)].second));
    std::sort(out.begin(), out.end(), [](OpKind a, OpKind b) { return op_id(a) < op_id(b); });
    return out;
}

Outcome pruning_correctness() {
    Rng rng(3);
    const std::vector<int> schedule = SearchConfig{}.effective_schedule();
    std::vector<int> checked(schedule.size(), 0);
    int mismatches = 0;
    bool counts_ok = true;
    for (int trial = 0; trial < 4; ++trial) {
        ArchWeights a = random_arch(rng);
        std::vector<int> trajectory{a.alive_range().second};
        counts_ok = counts_ok && a.alive_range().first == 11;
        for (std::size_t s = 0; s < schedule.size(); ++s) {
            const ArchWeights next = prune_edges(a, schedule[s]);
            for (CellType t : {CellType::Normal, CellType::Reduction}) {
                for (std::size_t e = 0; e < a.edges(t).size(); ++e) {
                    mismatches += next.edges(t)[e].alive != top_k_oracle(a.edges(t)[e], schedule[s]);
                    ++checked[s];
                }
            }
            counts_ok = counts_ok && next.alive_range().first == next.alive_range().second;
            trajectory.push_back(next.alive_range().first);
            a = next;
            drift(a, rng);
        }
        counts_ok = counts_ok && trajectory == std::vector<int>{11, 7, 4, 2, 1};
    }
    const int fewest = *std::min_element(checked.begin(), checked.end());
    return {counts_ok && mismatches == 0 && fewest >= 100,
            "alive 11,7,4,2,1; " + std::to_string(fewest) + " edges per stage, " + std::to_string(mismatches) +
                " oracle mismatches"};
}

/// Exhaustive pair search: prefer more non-Zero edges, then the larger
/// summed strength, then smaller sources; the stronger pair comes first.
CellGenotype decode_oracle(const std::vector<EdgeArch>& edges, int n_intermediate) {
    CellGenotype g;
    for (int j = kCellInputs; j < kCellInputs + n_intermediate; ++j) {
        struct Cand {
            int source;
            OpKind op;
            double strength;
        };
        std::vector<Cand> c;
        for (int i = 0; i < j; ++i) {
            const EdgeArch& e = edges[std::size_t(edge_index(i, j))];
            double denom = 0;
            for (Real v : e.logits.value().values()) denom += std::exp(v);
            c.push_back({i, e.alive[0], std::exp(e.logits.value()[op_id(e.alive[0]) - 1]) / denom});
        }
        const auto key = [](const Cand& x) { return std::pair{x.op != OpKind::Zero, x.strength}; };
        std::size_t best_a = 0, best_b = 1;
        std::pair<int, double> best{-1, -1};
        for (std::size_t a = 0; a < c.size(); ++a) {
            for (std::size_t b = a + 1; b < c.size(); ++b) {
                const std::pair<int, double> k{int(c[a].op != OpKind::Zero) + int(c[b].op != OpKind::Zero),
                                               c[a].strength + c[b].strength};
                if (k > best) best = k, best_a = a, best_b = b;
            }
        }
        Cand first = c[best_a], second = c[best_b];
        if (key(second) > key(first)) std::swap(first, second);
        g.nodes.push_back({GenePair{first.source, first.op}, GenePair{second.source, second.op}});
    }
    return g;
}

Outcome decode_correctness() {
    Rng rng(4);
    int mismatches = 0, malformed = 0, shift_changes = 0;
    for (int trial = 0; trial < 200; ++trial) {
        ArchWeights a = random_arch(rng);
        for (int k : SearchConfig{}.effective_schedule()) {
            a = prune_edges(a, k);
            drift(a, rng);
        }
        const Genotype g = decode_genotype(a);
        for (CellType t : {CellType::Normal, CellType::Reduction}) {
            const CellGenotype& cell = t == CellType::Normal ? g.normal : g.reduction;
            mismatches += !(cell == decode_oracle(a.edges(t), 4));
            for (std::size_t n = 0; n < cell.nodes.size(); ++n) {
                const auto& pair = cell.nodes[n];
                malformed += pair[0].source == pair[1].source || pair[0].source >= int(n) + kCellInputs ||
                             pair[1].source >= int(n) + kCellInputs;
            }
            malformed += cell.nodes.size() != 4;
        }
        ArchWeights shifted = a.clone();
        for (CellType t : {CellType::Normal, CellType::Reduction})
            for (auto& e : shifted.edges(t)) {
                const double c = rng.uniform(-100, 100);
                for (auto& v : e.logits.mutable_value().values()) v += c;
            }
        shift_changes += !(decode_genotype(shifted) == g);
    }
    return {mismatches == 0 && malformed == 0 && shift_changes == 0,
            "200 states: " + std::to_string(mismatches) + " oracle mismatches, " + std::to_string(malformed) +
                " malformed nodes, " + std::to_string(shift_changes) + " changed by shifts"};
}

CellGenotype random_cell(Rng& rng) {
    CellGenotype g;
    for (int j = kCellInputs; j < kCellInputs + 4; ++j) {
        const int a = rng.uniform_int(0, j - 1);
        int b = rng.uniform_int(0, j - 2);
        if (b >= a) ++b;
        g.nodes.push_back({GenePair{a, op_from_id(rng.uniform_int(1, kNumOps))},
                           GenePair{b, op_from_id(rng.uniform_int(1, kNumOps))}});
    }
    return g;
}

Outcome one_hot_equivalence() {
    NetworkConfig cfg;
    cfg.stem_channels = 8;
    cfg.fusion_channels = 8;
    Rng rng(5);
    double worst = 0;
    for (int trial = 0; trial < 3; ++trial) {
        auto net = build_supernet(cfg, 50 + std::uint64_t(trial));
        Genotype g;
        g.normal = random_cell(rng);
        g.reduction = random_cell(rng);
        ArchWeights a = net->arch().clone();
        for (CellType t : {CellType::Normal, CellType::Reduction}) {
            const CellGenotype& cell = t == CellType::Normal ? g.normal : g.reduction;
            std::vector<OpKind> hot(a.edges(t).size(), OpKind::Zero);
            for (std::size_t n = 0; n < cell.nodes.size(); ++n)
                for (const GenePair& p : cell.nodes[n]) hot[std::size_t(edge_index(p.source, int(n) + kCellInputs))] = p.op;
            for (std::size_t e = 0; e < hot.size(); ++e) {
                Tensor& l = a.edges(t)[e].logits.mutable_value();
                l.fill(-20.0);
                l[op_id(hot[e]) - 1] = 20.0;
            }
        }
        net->set_arch(std::move(a));
        DiscreteNetwork discrete(*net, g);
        const Var x = constant(random_tensor({2, 1, 64, 64}, rng, 0, 1));
        NoGradGuard guard;
        const NetworkOutput ym = net->forward(x);
        const NetworkOutput yd = discrete.forward(x);
        worst = std::max(worst, max_abs_diff(ym.prediction.value(), yd.prediction.value()));
        for (std::size_t i = 0; i < ym.pyramid.size(); ++i)
            worst = std::max(worst, max_abs_diff(ym.pyramid[i].value(), yd.pyramid[i].value()));
    }
    return {worst <= 1e-4, "3 networks, max |mixed - discrete| = " + num(worst)};
}

Outcome loss_metric_oracles() {
    Rng rng(6);
    // composition on real network outputs
    NetworkConfig cfg;
    cfg.stem_channels = 4;
    cfg.fusion_channels = 4;
    auto net = build_supernet(cfg, 6);
    double composition = 0;
    for (int trial = 0; trial < 3; ++trial) {
        const Tensor img = random_tensor({2, 1, 64, 64}, rng, 0, 1);
        Tensor mask(img.shape());
        for (std::int64_t i = 0; i < mask.numel(); ++i) mask[i] = img[i] > 0.5 ? 1.0 : 0.0;
        const NetworkOutput out = net->forward(constant(img));
        const LossBundle b = total_loss(out.prediction, out.branches, mask);
        double bra = 0;
        for (double v : b.branch) bra += v;
        composition = std::max({composition, std::abs(b.loss_bra - bra), std::abs(b.loss_total - b.loss_out - bra),
                                std::abs(b.total.value().item() - b.loss_total)});
        check_composition(b);
    }
    // dice of a perfect prediction, from the formula
    double dice_perfect = 0, library_perfect = 0;
    for (int trial = 0; trial < 20; ++trial) {
        Tensor t({1, 1, 8, 8});
        for (auto& v : t.values()) v = rng.uniform() < 0.4 ? 1.0 : 0.0;
        double inter = 0, sum = 0;
        for (Real v : t.values()) inter += v * v, sum += v;
        dice_perfect = std::max(dice_perfect, std::abs(1.0 - (2 * inter + 1.0) / (2 * sum + 1.0)));
        library_perfect = std::max(library_perfect, bce_dice_loss(t, t));
    }
    // confusion oracle
    int metric_mismatch = 0;
    double identity = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        Tensor target({1, 1, 8, 8});
        const double density = rng.uniform();
        for (auto& v : target.values()) v = rng.uniform() < density ? 1.0 : 0.0;
        const Tensor pred = random_tensor({1, 1, 8, 8}, rng, 0, 1);
        long tp = 0, fp = 0, fn = 0, tn = 0;
        for (std::int64_t i = 0; i < 64; ++i) {
            const bool p = pred[i] >= 0.5, t = target[i] == 1.0;
            tp += p && t, fp += p && !t, fn += !p && t, tn += !p && !t;
        }
        const bool none = tp + fp + fn == 0;
        const double iou = none ? 1.0 : double(tp) / double(tp + fp + fn);
        const double f1 = none ? 1.0 : 2.0 * double(tp) / double(2 * tp + fp + fn);
        const double pa = none ? 1.0 : double(tp + tn) / 64.0;
        const MetricsRecord r = segmentation_metrics(pred, target);
        metric_mismatch += r.iou != iou || r.f1 != f1 || r.pa != pa;
        identity = std::max(identity, std::abs(r.f1 - 2 * r.iou / (1 + r.iou)));
    }
    const bool pass = composition <= 1e-6 && dice_perfect == 0.0 && library_perfect <= 1e-6 && metric_mismatch == 0 &&
                      identity <= 1e-9;
    return {pass, "composition err " + num(composition) + ", perfect dice " + num(dice_perfect) + " (loss " +
                      num(library_perfect) + "), " + std::to_string(metric_mismatch) +
                      "/1000 metric mismatches, F1 identity err " + num(identity)};
}

class DepthwiseOnly : public Module {
public:
    DepthwiseOnly() {
        Rng rng(7);
        conv = register_module("dw", std::make_shared<Conv2d>(8, 8, 3, fn::ConvSpec{1, 1, 1, 8}, true, rng));
    }
    std::shared_ptr<Conv2d> conv;
};

Outcome complexity_accounting() {
    DepthwiseOnly m;
    const Complexity c = count_params_flops(m, [&] { m.conv->forward(constant(Tensor({1, 8, 16, 16}))); });
    const std::int64_t params = 3 * 3 * 8 + 8;
    const std::int64_t macs = 3 * 3 * 8 * 16 * 16;
    const std::int64_t flops = 2 * macs + 8 * 16 * 16;
    auto zero = make_candidate(OpKind::Zero, 8, 1, 1);
    const Complexity z = count_params_flops(*zero, [&] { zero->apply(constant(Tensor({1, 8, 16, 16}))); });
    return {c.params == params && c.flops == flops && 2 * macs == 36864 && z.params == 0 && z.flops == 0,
            "depthwise " + std::to_string(c.params) + " params, " + std::to_string(c.flops) + " FLOPs (expected " +
                std::to_string(params) + ", " + std::to_string(flops) + "); Zero " + std::to_string(z.params) + "/" +
                std::to_string(z.flops)};
}

// ---------------------------------------------------------------------------
// Desk-scale runs, shared by criteria 8 to 10.

constexpr std::uint64_t kSeed = 7;

RunConfig desk_config() {
    RunConfig cfg;
    auto& s = cfg.search;
    s.network = NetworkConfig{};  // C0 = 16, 64 x 64, four normal and four reduction cells
    s.schedule = {7, 4, 2, 1};
    s.epochs_per_stage = 8;
    s.warmup_epochs = 2;
    s.batch_size = 8;
    cfg.retrain.epochs = 60;
    cfg.retrain.batch_size = 8;
    cfg.synth.n_train = 200;
    cfg.synth.n_test = 50;
    cfg.synth.kinds = {DefectKind::Blob, DefectKind::Scratch};
    cfg.synth.contrast_lo = 0.1;
    cfg.synth.contrast_hi = 0.3;
    cfg.synth.seed = derive_seed(kSeed, "data");
    return cfg;
}

struct Desk {
    testing::TempDir root{"acceptance"};
    RunConfig cfg = desk_config();
    Dataset train, test;
    std::optional<SearchRunResult> first, second;
    std::optional<RetrainRunResult> learned, frozen;
    std::optional<Evaluation> eval;

    void data() {
        if (!train.empty()) return;
        generate_synthetic_dataset(cfg.synth, root / "data");
        const LoadOptions opts{1, 64, 64};
        train = load_dataset(root / "data", "train", opts);
        test = load_dataset(root / "data", "test", opts);
    }
    const SearchRunResult& search(int which) {
        data();
        auto& slot = which == 0 ? first : second;
        if (!slot) slot = search_to_directory(cfg, train, kSeed, root / ("search" + std::to_string(which)));
        return *slot;
    }
    RetrainRunResult& retrained(bool frozen_gates) {
        auto& slot = frozen_gates ? frozen : learned;
        if (!slot) {
            RunConfig c = cfg;
            Genotype g = search(0).genotype;
            c.search.network.frozen_gates = frozen_gates;
            if (frozen_gates) g.config_digest.clear();  // the network digest includes the gate setting
            slot = retrain_to_directory(c, g, train, kSeed, root / (frozen_gates ? "frozen" : "learned"));
        }
        return *slot;
    }
};

Outcome reproducibility(Desk& d) {
    d.search(0);
    d.search(1);
    const std::string a = read_file(d.root / "search0" / run_files::kGenotype);
    const std::string b = read_file(d.root / "search1" / run_files::kGenotype);
    return {a == b && !a.empty(), a == b ? "two searches wrote identical genotype files (" + std::to_string(a.size()) +
                                               " bytes)"
                                         : "genotype files differ"};
}

Outcome desk_end_to_end(Desk& d) {
    const SearchRunResult& s = d.search(0);
    RetrainRunResult& r = d.retrained(false);
    const Evaluation ev = evaluate_to_directory(*r.net, d.test, d.cfg.retrain.threshold, d.root / "learned", false);
    const std::int64_t super_params = build_supernet(d.cfg.search.network, derive_seed(kSeed, "init"))->parameter_count();
    const std::int64_t discrete_params = r.net->parameter_count();
    write_file_atomic(d.root / "learned" / run_files::kSearchLog, search_log_jsonl(s.log));
    report_directory(d.root / "learned");
    return {ev.metrics.iou >= 0.5 && discrete_params < super_params,
            "test IoU " + num(ev.metrics.iou) + " F1 " + num(ev.metrics.f1) + " PA " + num(ev.metrics.pa) +
                ", params " + std::to_string(discrete_params) + " vs supernet " + std::to_string(super_params)};
}

Outcome fusion_ablation(Desk& d) {
    const double learned = d.retrained(false).state.history.back().loss_total;
    const double frozen = d.retrained(true).state.history.back().loss_total;
    return {learned <= frozen, "final Loss_total learned gates " + num(learned, 6) + " vs frozen " + num(frozen, 6)};
}

}  // namespace

int main(int argc, char** argv) {
    std::set<int> wanted;
    for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));
    Desk desk;
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"relaxation validity", relaxation_validity},
        {"gradient fidelity", gradient_fidelity},
        {"pruning correctness", pruning_correctness},
        {"decode correctness", decode_correctness},
        {"one-hot supernet/discrete equivalence", one_hot_equivalence},
        {"loss and metric oracles", loss_metric_oracles},
        {"complexity accounting", complexity_accounting},
        {"deterministic reproducibility", [&] { return reproducibility(desk); }},
        {"desk-scale end-to-end", [&] { return desk_end_to_end(desk); }},
        {"fusion ablation sanity", [&] { return fusion_ablation(desk); }},
    };
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int id = int(i) + 1;
        if (!wanted.empty() && !wanted.contains(id)) continue;
        const auto start = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        std::printf("%s criterion %d (%s): %s [%.1fs]\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first.c_str(),
                    o.detail.c_str(), secs);
        std::fflush(stdout);
        failed += !o.pass;
    }
    return failed == 0 ? 0 : 1;
}
