#include <map>
#include <set>

#include "doctest.h"
#include "helpers.hpp"
#include "nasdet/errors.hpp"
#include "nasdet/search.hpp"
#include "nasdet/supernet.hpp"

using namespace nasdet;
using nasdet::testing::random_tensor;

namespace {

NetworkConfig tiny_config() {
    NetworkConfig cfg;
    cfg.stem_channels = 4;
    cfg.fusion_channels = 4;
    return cfg;
}

Genotype all_identity() {
    Genotype g;
    g.normal = uniform_cell(4, {0, OpKind::Identity}, {1, OpKind::Identity});
    g.reduction = g.normal;
    return g;
}

}  // namespace

TEST_SUITE("supernet") {

TEST_CASE("configuration checks") {
    NetworkConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    CHECK(cfg.levels() == 5);
    CHECK(cfg.size_divisor() == 64);
    cfg.height = 96;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg.height = 32;
    CHECK_THROWS_AS(build_supernet(cfg, 1), ConfigError);
    cfg = NetworkConfig{};
    cfg.in_channels = 2;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);

    const auto layout = NetworkConfig{}.layout();
    REQUIRE(layout.size() == 8);
    for (std::size_t i = 0; i < 8; ++i) CHECK(layout[i] == (i % 2 == 0 ? CellType::Normal : CellType::Reduction));
}

TEST_CASE("desk-scale pyramid halves from 32 down to 2") {
    NetworkConfig cfg;  // C0 = 16, 64 x 64
    auto net = build_supernet(cfg, 7);
    Rng rng(1);
    const NetworkOutput out = net->forward(constant(random_tensor({1, 1, 64, 64}, rng, 0, 1)));
    REQUIRE(out.pyramid.size() == 5);
    const int sizes[] = {32, 16, 8, 4, 2};
    for (int i = 0; i < 5; ++i) {
        CHECK(out.pyramid[std::size_t(i)].shape().h == sizes[i]);
        CHECK(out.pyramid[std::size_t(i)].shape().w == sizes[i]);
    }
    CHECK(out.prediction.shape() == Shape{1, 1, 64, 64});
    REQUIRE(out.branches.size() == 5);
    for (const auto& b : out.branches) CHECK(b.shape() == Shape{1, 1, 64, 64});
}

TEST_CASE("pyramid level i is input / 2^i for other depths and sizes") {
    for (int n_red : {2, 3}) {
        NetworkConfig cfg = tiny_config();
        cfg.n_reduction = n_red;
        cfg.n_normal = n_red;
        cfg.height = 2 * cfg.size_divisor();
        cfg.width = cfg.size_divisor();
        auto net = build_supernet(cfg, 2);
        const NetworkOutput out = net->forward(constant(Tensor({1, 1, cfg.height, cfg.width}, 0.5)));
        REQUIRE(int(out.pyramid.size()) == n_red + 1);
        for (int i = 0; i <= n_red; ++i) {
            CHECK(out.pyramid[std::size_t(i)].shape().h == cfg.height >> (i + 1));
            CHECK(out.pyramid[std::size_t(i)].shape().w == cfg.width >> (i + 1));
        }
        CHECK(out.prediction.shape() == Shape{1, 1, cfg.height, cfg.width});
    }
}

TEST_CASE("width multiplies at every reduction cell") {
    const auto net = build_supernet(tiny_config(), 1);
    int width = 4;
    for (const auto& s : net->cell_specs()) {
        if (s.type == CellType::Reduction) width *= 2;
        CHECK(s.width == width);
    }
    CHECK(width == 64);
}

TEST_CASE("parameter count is the sum over components") {
    const auto net = build_supernet(tiny_config(), 3);
    std::map<std::string, std::int64_t> by_component;
    std::set<const Node*> seen;
    for (const auto& p : net->named_parameters()) {
        CHECK(seen.insert(p.var.node().get()).second);
        by_component[p.name.substr(0, p.name.find('.'))] += p.var.value().numel();
    }
    std::int64_t total = 0;
    for (const auto& [name, count] : by_component) total += count;
    CHECK(total == net->parameter_count());
    CHECK(by_component.count("stem") == 1);
    CHECK(by_component.count("fusion") == 1);
    CHECK(by_component.count("cell7") == 1);
    CHECK(by_component.count("branch5") == 1);
}

TEST_CASE("forward contracts") {
    auto net = build_supernet(tiny_config(), 4);
    const NetworkOutput zero = net->forward(constant(Tensor({2, 1, 64, 64})));
    for (Real v : zero.prediction.value().values()) {
        CHECK(std::isfinite(v));
        CHECK(v > 0.0);
        CHECK(v < 1.0);
    }
    Rng rng(2);
    const Var x = constant(random_tensor({2, 1, 64, 64}, rng, 0, 1));
    const Tensor a = net->forward(x).prediction.value();
    const Tensor b = net->forward(x).prediction.value();
    CHECK(max_abs_diff(a, b) == 0.0);
    CHECK_THROWS_AS(net->forward(constant(Tensor({1, 1, 32, 64}))), ShapeError);
    CHECK_THROWS_AS(net->forward(constant(Tensor({1, 3, 64, 64}))), ShapeError);

    NetworkConfig rgb = tiny_config();
    rgb.in_channels = 3;
    auto net3 = build_supernet(rgb, 4);
    CHECK(net3->forward(constant(Tensor({1, 3, 64, 64}, 0.2))).prediction.shape() == Shape{1, 1, 64, 64});
}

TEST_CASE("desk-scale forwards stay finite over 100 seeds") {
    const NetworkConfig cfg;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        auto net = build_supernet(cfg, seed);
        Rng rng(seed, "input");
        const NetworkOutput out = net->forward(constant(random_tensor({1, 1, 64, 64}, rng, 0, 1)));
        CHECK(all_finite(out.prediction.value()));
        for (const auto& b : out.branches) CHECK(all_finite(b.value()));
    }
}

TEST_CASE("discrete network builds from genotypes") {
    for (auto [h, w] : {std::pair{64, 64}, std::pair{128, 64}, std::pair{64, 192}}) {
        NetworkConfig cfg = tiny_config();
        cfg.height = h;
        cfg.width = w;
        auto net = build_discrete_network(all_identity(), cfg, 5);
        const NetworkOutput out = net->forward(constant(Tensor({1, 1, h, w}, 0.3)));
        CHECK(out.prediction.shape() == Shape{1, 1, h, w});
        CHECK(all_finite(out.prediction.value()));
    }
    Genotype bad = all_identity();
    bad.reduction.nodes[2][1].source = 0;
    CHECK_THROWS_AS(build_discrete_network(bad, tiny_config(), 1), GenotypeError);
    bad = all_identity();
    bad.normal.nodes.pop_back();
    CHECK_THROWS_AS(build_discrete_network(bad, tiny_config(), 1), GenotypeError);
}

TEST_CASE("a pruned, decoded network is smaller than the supernet") {
    auto net = build_supernet(tiny_config(), 6);
    const auto before = net->parameter_count();
    ArchWeights arch = net->arch().clone();
    for (int k : {7, 4, 2, 1}) arch = prune_edges(arch, k);
    net->set_arch(arch);
    CHECK(net->parameter_count() < before);
    const Genotype g = decode_genotype(net->arch());
    auto discrete = build_discrete_network(g, tiny_config(), 6);
    CHECK(discrete->parameter_count() < before);
    DiscreteNetwork shared(*net, g);
    CHECK(shared.parameter_count() <= net->parameter_count());
}

TEST_CASE("set_arch rejects mismatched architectures") {
    auto net = build_supernet(tiny_config(), 1);
    CHECK_THROWS_AS(net->set_arch(ArchWeights(3, 1)), StateError);
}

TEST_CASE("supernet normalization uses batch statistics, the discrete network tracks them") {
    auto super = build_supernet(tiny_config(), 8);
    CHECK(super->named_buffers().empty());
    auto discrete = build_discrete_network(all_identity(), tiny_config(), 8);
    CHECK_FALSE(discrete->named_buffers().empty());
}

}  // TEST_SUITE
