#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "doctest.h"
#include "helpers.hpp"
#include "nasdet/errors.hpp"
#include "nasdet/search.hpp"

using namespace nasdet;
using nasdet::testing::random_tensor;

namespace {

SearchConfig tiny_search() {
    SearchConfig cfg;
    cfg.network.stem_channels = 4;
    cfg.network.fusion_channels = 4;
    cfg.network.n_normal = 1;
    cfg.network.n_reduction = 1;
    cfg.network.height = 16;
    cfg.network.width = 16;
    cfg.epochs_per_stage = 2;
    cfg.warmup_epochs = 1;
    cfg.batch_size = 2;
    return cfg;
}

Dataset tiny_data(int n, std::uint64_t seed) {
    Rng rng(seed);
    Dataset d;
    for (int i = 0; i < n; ++i) {
        Sample s{random_tensor({1, 1, 16, 16}, rng, 0, 1), Tensor({1, 1, 16, 16}), "s" + std::to_string(i)};
        for (std::int64_t k = 0; k < s.mask.numel(); ++k) s.mask[k] = s.image[k] > 0.7 ? 1.0 : 0.0;
        d.push_back(std::move(s));
    }
    return d;
}

ArchWeights random_arch(Rng& rng, int n_intermediate = 4) {
    ArchWeights a(n_intermediate, rng.engine()());
    for (CellType t : {CellType::Normal, CellType::Reduction})
        for (auto& e : a.edges(t))
            for (auto& v : e.logits.mutable_value().values()) v = rng.uniform(-2, 2);
    return a;
}

/// Brute force: rank alive ops by (logit desc, id asc) and keep the first k.
std::vector<OpKind> top_k_oracle(const EdgeArch& e, int k) {
    std::vector<std::pair<double, int>> ranked;
    for (OpKind op : e.alive) ranked.push_back({-e.logits.value()[op_id(op) - 1], op_id(op)});
    std::sort(ranked.begin(), ranked.end());
    std::vector<OpKind> out;
    for (int i = 0; i < k; ++i) out.push_back(op_from_id(ranked[std::size_t(i)].second));
    std::sort(out.begin(), out.end(), [](OpKind a, OpKind b) { return op_id(a) < op_id(b); });
    return out;
}

double survivor_logit_for(double score) { return std::log(10.0 * score / (1.0 - score)); }

void set_single(EdgeArch& e, OpKind op, double logit) {
    e.alive = {op};
    e.logits.mutable_value().fill(0.0);
    e.logits.mutable_value()[op_id(op) - 1] = logit;
}

}  // namespace

TEST_SUITE("search") {

TEST_CASE("configuration validation") {
    SearchConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    CHECK(cfg.schedule == std::vector<int>{7, 4, 2, 1});
    CHECK(cfg.epochs_per_stage == 70);
    CHECK(cfg.warmup_epochs == 20);
    CHECK(cfg.batch_size == 4);
    CHECK(cfg.arch_fraction == 0.6);
    for (auto bad : {std::vector<int>{7, 7, 1}, std::vector<int>{4, 7, 1}, std::vector<int>{7, 4, 2},
                     std::vector<int>{12, 1}, std::vector<int>{}, std::vector<int>{3, 0}}) {
        cfg.schedule = bad;
        CHECK_THROWS_AS(cfg.validate(), ConfigError);
    }
    cfg = SearchConfig{};
    cfg.warmup_epochs = 71;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = SearchConfig{};
    cfg.arch_fraction = 1.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = SearchConfig{};
    cfg.staged = false;
    CHECK(cfg.effective_schedule() == std::vector<int>{1});
}

TEST_CASE("prune examples") {
    ArchWeights a(4, 1);
    EdgeArch& e = a.edges(CellType::Normal)[0];
    e.alive = {OpKind::Identity, OpKind::SepConv3, OpKind::MaxPool3};
    e.logits.mutable_value()[op_id(OpKind::Identity) - 1] = 3;
    e.logits.mutable_value()[op_id(OpKind::SepConv3) - 1] = 1;
    e.logits.mutable_value()[op_id(OpKind::MaxPool3) - 1] = 2;
    for (auto& other : a.edges(CellType::Normal)) other.alive.resize(3);
    for (auto& other : a.edges(CellType::Reduction)) other.alive.resize(3);

    const ArchWeights p = prune_edges(a, 2);
    CHECK(p.edges(CellType::Normal)[0].alive == std::vector<OpKind>{OpKind::Identity, OpKind::MaxPool3});
    CHECK(p.edges(CellType::Normal)[0].logits.value()[op_id(OpKind::MaxPool3) - 1] == 2.0);
    CHECK_FALSE(p.edges(CellType::Normal)[0].logits.same(e.logits));

    const ArchWeights same = prune_edges(a, 3);
    for (CellType t : {CellType::Normal, CellType::Reduction})
        for (std::size_t i = 0; i < a.edges(t).size(); ++i) CHECK(same.edges(t)[i].alive == a.edges(t)[i].alive);

    CHECK_THROWS_AS(prune_edges(a, 4), ScheduleError);
    CHECK_THROWS_AS(prune_edges(a, 0), ScheduleError);
}

TEST_CASE("ties in pruning go to the smaller op id") {
    ArchWeights a(1, 1);
    for (CellType t : {CellType::Normal, CellType::Reduction})
        for (auto& e : a.edges(t)) e.logits.mutable_value().fill(0.5);
    const ArchWeights p = prune_edges(a, 3);
    CHECK(p.edges(CellType::Normal)[1].alive == std::vector<OpKind>{OpKind::Zero, OpKind::Identity, OpKind::SepConv3});
}

TEST_CASE("default schedule walks 11, 7, 4, 2, 1 and matches the brute-force oracle") {
    Rng rng(5);
    for (int trial = 0; trial < 5; ++trial) {
        ArchWeights a = random_arch(rng);
        std::vector<int> trajectory{a.alive_range().first};
        CHECK(a.alive_range().second == 11);
        for (int k : {7, 4, 2, 1}) {
            const ArchWeights next = prune_edges(a, k);
            for (CellType t : {CellType::Normal, CellType::Reduction})
                for (std::size_t i = 0; i < a.edges(t).size(); ++i)
                    CHECK(next.edges(t)[i].alive == top_k_oracle(a.edges(t)[i], k));
            CHECK(next.alive_range().first == next.alive_range().second);
            trajectory.push_back(next.alive_range().first);
            a = next;
            // logits drift between stages
            for (CellType t : {CellType::Normal, CellType::Reduction})
                for (auto& e : a.edges(t))
                    for (auto& v : e.logits.mutable_value().values()) v += rng.normal(0, 0.3);
        }
        CHECK(trajectory == std::vector<int>{11, 7, 4, 2, 1});
    }
}

TEST_CASE("decode examples") {
    ArchWeights a(4, 1);
    for (CellType t : {CellType::Normal, CellType::Reduction})
        for (auto& e : a.edges(t)) set_single(e, OpKind::SepConv3, 0.0);
    auto& edges = a.edges(CellType::Normal);
    set_single(edges[std::size_t(edge_index(0, 3))], OpKind::DilConv3, survivor_logit_for(0.9));
    set_single(edges[std::size_t(edge_index(1, 3))], OpKind::AvgPool3, survivor_logit_for(0.7));
    set_single(edges[std::size_t(edge_index(2, 3))], OpKind::Identity, survivor_logit_for(0.4));
    CHECK(edge_strength(edges[std::size_t(edge_index(0, 3))]) == doctest::Approx(0.9));
    for (int i = 0; i < 5; ++i) set_single(edges[std::size_t(edge_index(i, 5))], OpKind::Zero, double(i));

    const Genotype g = decode_genotype(a);
    const auto& node3 = g.normal.nodes[1];
    CHECK(node3[0] == GenePair{0, OpKind::DilConv3});
    CHECK(node3[1] == GenePair{1, OpKind::AvgPool3});
    const auto& node5 = g.normal.nodes[3];
    CHECK(node5[0] == GenePair{4, OpKind::Zero});
    CHECK(node5[1] == GenePair{3, OpKind::Zero});
    CHECK(g.normal.nodes.size() == 4);
    CHECK(g.reduction.nodes.size() == 4);
    CHECK_NOTHROW(validate(g, 4));

    // Zero edges only fill in behind the live ones.
    set_single(edges[std::size_t(edge_index(2, 5))], OpKind::MaxPool3, -5.0);
    const Genotype h = decode_genotype(a);
    CHECK(h.normal.nodes[3][0] == GenePair{2, OpKind::MaxPool3});
    CHECK(h.normal.nodes[3][1] == GenePair{4, OpKind::Zero});

    ArchWeights wide(4, 1);
    CHECK_THROWS_AS(decode_genotype(wide), StateError);
}

TEST_CASE("decode is invariant to per-edge logit shifts") {
    Rng rng(6);
    for (int trial = 0; trial < 20; ++trial) {
        ArchWeights a = random_arch(rng);
        for (int k : {7, 4, 2, 1}) a = prune_edges(a, k);
        const Genotype g = decode_genotype(a);
        ArchWeights shifted = a.clone();
        for (CellType t : {CellType::Normal, CellType::Reduction})
            for (auto& e : shifted.edges(t)) {
                const double c = rng.uniform(-50, 50);
                for (auto& v : e.logits.mutable_value().values()) v += c;
            }
        CHECK(decode_genotype(shifted) == g);
    }
}

TEST_CASE("optimizers by hand") {
    SUBCASE("sgd momentum and decay") {
        Var w = leaf_parameter(Tensor({1, 1, 1, 1}, 2.0));
        std::vector<NamedParameter> ps{{"w", w}};
        Sgd sgd(0.1, 0.9, 0.01);
        w.grad() = Tensor({1, 1, 1, 1}, 1.0);
        sgd.step(ps);
        const double d1 = 1.0 + 0.01 * 2.0;
        CHECK(w.value()[0] == doctest::Approx(2.0 - 0.1 * d1));
        const double w1 = 2.0 - 0.1 * d1;
        sgd.step(ps);
        const double d2 = 1.0 + 0.01 * w1;
        CHECK(w.value()[0] == doctest::Approx(w1 - 0.1 * (0.9 * d1 + d2)));
        sgd.retain({});
        CHECK(sgd.state().empty());
    }
    SUBCASE("adam with zero gradient only shrinks by decay") {
        Var a = leaf_parameter(Tensor({1, 3, 1, 1}, 0.5));
        std::vector<NamedParameter> ps{{"a", a}};
        a.grad() = Tensor({1, 3, 1, 1});
        Adam plain(0.002, 0.9, 0.999, 1e-8, 0.0);
        plain.step(ps);
        for (Real v : a.value().values()) CHECK(v == 0.5);
        Adam decayed(0.002, 0.9, 0.999, 1e-8, 1e-3);
        decayed.step(ps);
        for (Real v : a.value().values()) {
            CHECK(v < 0.5);
            CHECK(v == doctest::Approx(0.5 - 0.002).epsilon(1e-6));
        }
    }
    SUBCASE("adam leaves masked entries alone") {
        Var a = leaf_parameter(Tensor({1, 3, 1, 1}, 0.5));
        std::vector<NamedParameter> ps{{"a", a}};
        a.grad() = Tensor({1, 3, 1, 1}, 1.0);
        Adam adam(0.1, 0.9, 0.999, 1e-8, 1e-3);
        adam.step(ps, {{"a", {1, 0, 1}}});
        CHECK(a.value()[0] < 0.5);
        CHECK(a.value()[1] == 0.5);
        CHECK(adam.state().at("a").step == 1);
    }
}

TEST_CASE("splits are disjoint and cover the training set 6:4") {
    const Dataset data = tiny_data(10, 1);
    const SearchState s = init_search(tiny_search(), data, 3);
    CHECK(s.arch_split.size() == 6);
    CHECK(s.weight_split.size() == 4);
    std::set<std::size_t> all(s.arch_split.begin(), s.arch_split.end());
    for (std::size_t i : s.weight_split) CHECK(all.insert(i).second);
    CHECK(all.size() == 10);
    CHECK_THROWS_AS(init_search(tiny_search(), tiny_data(1, 1), 3), DataError);
    CHECK_THROWS_AS(init_search(tiny_search(), Dataset{}, 3), DataError);
}

TEST_CASE("warm-up leaves logits alone, bilevel epochs move both") {
    const Dataset data = tiny_data(8, 2);
    SearchState s = init_search(tiny_search(), data, 4);
    const ArchWeights before = s.supernet->arch().clone();
    const Tensor stem = testing::find_param(*s.supernet, "stem.weight").value();
    const EpochRecord w = warmup_epoch(s, data);
    CHECK(w.split == "weight");
    CHECK(w.loss_bra > 0);
    CHECK(w.loss_total == doctest::Approx(w.loss_out + w.loss_bra));
    for (std::size_t i = 0; i < before.edges(CellType::Normal).size(); ++i)
        CHECK(max_abs_diff(before.edges(CellType::Normal)[i].logits.value(),
                           s.supernet->arch().edges(CellType::Normal)[i].logits.value()) == 0.0);
    CHECK(max_abs_diff(stem, testing::find_param(*s.supernet, "stem.weight").value()) > 0);

    const auto [rw, ra] = bilevel_epoch(s, data);
    CHECK(rw.split == "weight");
    CHECK(ra.split == "arch");
    CHECK(ra.alive_max == 11);
    double moved = 0;
    for (std::size_t i = 0; i < before.edges(CellType::Normal).size(); ++i)
        moved += max_abs_diff(before.edges(CellType::Normal)[i].logits.value(),
                              s.supernet->arch().edges(CellType::Normal)[i].logits.value());
    CHECK(moved > 0);
    // every step's adam state advanced once per arch batch
    CHECK(s.arch_opt.state().at("normal.0").step == 3);
}

TEST_CASE("non-finite losses abort the search") {
    const Dataset data = tiny_data(6, 3);
    SearchState s = init_search(tiny_search(), data, 5);
    testing::find_param(*s.supernet, "fusion.classifier.bias").mutable_value()[0] =
        std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(warmup_epoch(s, data), DivergenceError);
}

TEST_CASE("a small search runs the schedule, is deterministic and resumes exactly") {
    const Dataset data = tiny_data(8, 4);
    const SearchConfig cfg = tiny_search();

    std::vector<EpochRecord> records;
    SearchState state;
    const Genotype g1 = run_search(cfg, data, 11, {[&](const EpochRecord& r) { records.push_back(r); }, {}}, &state);
    CHECK_NOTHROW(validate(g1, 4));
    CHECK(g1.seed == 11);
    CHECK(g1.schedule == cfg.schedule);
    REQUIRE(state.alive_history.size() == 5);
    const int expect[] = {11, 7, 4, 2, 1};
    for (std::size_t k = 0; k < 5; ++k)
        for (int n : state.alive_history[k]) CHECK(n == expect[k]);
    // per stage: one warm-up record, then weight + arch records
    CHECK(records.size() == 4 * 3);
    for (const auto& r : records) {
        CHECK(std::isfinite(r.loss_total));
        CHECK(r.loss_bra > 0);
    }

    const Genotype g2 = run_search(cfg, data, 11);
    CHECK(g2 == g1);

    struct Stop {};
    SearchState partial;
    int checkpoints = 0;
    SearchHooks stop_hooks{{}, [&](const SearchState&) {
                               if (++checkpoints == 4) throw Stop{};
                           }};
    CHECK_THROWS_AS(run_search(cfg, data, 11, stop_hooks, &partial), Stop);
    CHECK(partial.stage == 1);
    const Genotype resumed = run_search(cfg, data, 11, {}, &partial);
    CHECK(resumed == g1);

    const Genotype other = run_search(cfg, data, 12);
    CHECK(other.seed == 12);
}

TEST_CASE("non-staged search prunes straight to one op") {
    SearchConfig cfg = tiny_search();
    cfg.staged = false;
    SearchState state;
    const Genotype g = run_search(cfg, tiny_data(6, 5), 2, {}, &state);
    CHECK(g.schedule == std::vector<int>{1});
    REQUIRE(state.alive_history.size() == 2);
    for (int n : state.alive_history[1]) CHECK(n == 1);
}

}  // TEST_SUITE
