#include <cmath>
#include <set>

#include "doctest.h"
#include "gradcheck.hpp"
#include "helpers.hpp"
#include "nasdet/errors.hpp"
#include "nasdet/ops.hpp"

using namespace nasdet;
using nasdet::testing::random_tensor;

namespace {

const Var& param(const Module& m, const std::string& name, std::vector<NamedParameter>& storage) {
    storage = m.named_parameters();
    for (const auto& p : storage)
        if (p.name == name) return p.var;
    FAIL("missing parameter " << name);
    return storage.front().var;
}

}  // namespace

TEST_SUITE("ops") {

TEST_CASE("operation table ids and names form a bijection") {
    std::set<int> ids;
    std::set<std::string_view> names;
    for (OpKind k : kAllOps) {
        ids.insert(op_id(k));
        names.insert(op_name(k));
        CHECK(op_from_name(op_name(k)) == k);
        CHECK(op_from_id(op_id(k)) == k);
    }
    CHECK(ids.size() == 11);
    CHECK(*ids.begin() == 1);
    CHECK(*ids.rbegin() == 11);
    CHECK(names.size() == 11);
    CHECK(op_from_name("Sep_conv_3x3") == OpKind::SepConv3);
    CHECK_FALSE(op_from_name("sep_conv_3x3").has_value());
    CHECK_THROWS_AS(op_from_id(12), ConfigError);
}

TEST_CASE("construction errors") {
    CHECK_THROWS_AS(make_candidate(static_cast<OpKind>(42), 8, 1, 1), ConfigError);
    CHECK_THROWS_AS(make_candidate(OpKind::SepConv3, 0, 1, 1), ConfigError);
    CHECK_THROWS_AS(make_candidate(OpKind::SepConv3, 4, 3, 1), ConfigError);
    auto op = make_candidate(OpKind::SepConv3, 8, 1, 1);
    CHECK_THROWS_AS(op->apply(constant(Tensor({1, 4, 8, 8}))), ShapeError);
}

TEST_CASE("every kind preserves channels and halves with ceiling at stride 2") {
    Rng rng(21);
    for (int trial = 0; trial < 6; ++trial) {
        const int c = rng.uniform_int(1, 9);
        const int h = rng.uniform_int(3, 12);
        const int w = rng.uniform_int(3, 12);
        const Var x = constant(random_tensor({2, c, h, w}, rng));
        for (OpKind k : kAllOps) {
            for (int stride : {1, 2}) {
                auto op = make_candidate(k, c, stride, std::uint64_t(trial));
                const Var y = op->apply(x);
                INFO(op_name(k) << " c=" << c << " h=" << h << " w=" << w << " stride=" << stride);
                CHECK(y.shape().c == c);
                CHECK(y.shape().h == (stride == 1 ? h : (h + 1) / 2));
                CHECK(y.shape().w == (stride == 1 ? w : (w + 1) / 2));
                CHECK(y.shape() == op->output_shape(x.shape()));
            }
        }
    }
}

TEST_CASE("SepConv3 keeps an 8x16x16 map at 8x16x16") {
    auto op = make_candidate(OpKind::SepConv3, 8, 1, 5);
    Rng rng(1);
    CHECK(op->apply(constant(random_tensor({1, 8, 16, 16}, rng))).shape() == Shape{1, 8, 16, 16});
}

TEST_CASE("Zero emits zeros of the reduced shape with zero input gradient") {
    auto op = make_candidate(OpKind::Zero, 8, 2, 5);
    Rng rng(2);
    Var x = leaf_parameter(random_tensor({1, 8, 16, 16}, rng));
    const Var y = op->apply(x);
    REQUIRE(y.shape() == Shape{1, 8, 8, 8});
    for (auto v : y.value().values()) CHECK(v == 0.0);
    CHECK(op->parameter_count() == 0);
    CHECK_FALSE(y.requires_grad());
}

TEST_CASE("Identity at stride 1 returns its input bit for bit") {
    auto op = make_candidate(OpKind::Identity, 3, 1, 5);
    Rng rng(3);
    const Var x = constant(random_tensor({2, 3, 5, 5}, rng));
    const Var y = op->apply(x);
    CHECK(max_abs_diff(x.value(), y.value()) == 0.0);
}

TEST_CASE("pooling without normalization") {
    OpOptions bare;
    bare.pool_norm = false;
    auto avg = make_candidate(OpKind::AvgPool3, 2, 1, 1, bare);
    const Var y = avg->apply(constant(Tensor({1, 2, 6, 6}, 0.7)));
    for (int h = 1; h < 5; ++h)
        for (int w = 1; w < 5; ++w) CHECK(y.value().at(0, 1, h, w) == doctest::Approx(0.7).epsilon(1e-14));

    auto mx = make_candidate(OpKind::MaxPool3, 1, 2, 1, bare);
    const Var z = mx->apply(constant(nasdet::testing::iota_tensor({1, 1, 4, 4})));
    REQUIRE(z.shape() == Shape{1, 1, 2, 2});
    CHECK(z.value()[0] == 6);
    CHECK(z.value()[1] == 8);
    CHECK(z.value()[2] == 14);
    CHECK(z.value()[3] == 16);
}

TEST_CASE("channel attention on constant channels scales each channel by its gate") {
    OpOptions opt;
    opt.se_ratio = 4;
    auto op = make_candidate(OpKind::ChannelAtt, 8, 1, 77, opt);
    Tensor x({1, 8, 6, 6});
    const double level[8] = {0.5, -1.0, 2.0, 0.1, -0.3, 1.5, 0.0, 0.9};
    for (int c = 0; c < 8; ++c)
        for (int i = 0; i < 36; ++i) x.plane(0, c)[i] = level[c];
    const Var y = op->apply(constant(x));

    // Hand evaluation: s = channel levels, h = relu(W1 s + b1), g = logistic(W2 h + b2).
    std::vector<NamedParameter> st;
    const Tensor w1 = param(*op, "squeeze.weight", st).value();
    const Tensor b1 = param(*op, "squeeze.bias", st).value();
    const Tensor w2 = param(*op, "excite.weight", st).value();
    const Tensor b2 = param(*op, "excite.bias", st).value();
    REQUIRE(w1.shape().n == 2);
    double hidden[2];
    for (int j = 0; j < 2; ++j) {
        double acc = b1[j];
        for (int c = 0; c < 8; ++c) acc += w1.at(j, c, 0, 0) * level[c];
        hidden[j] = std::max(0.0, acc);
    }
    for (int c = 0; c < 8; ++c) {
        double acc = b2[c];
        for (int j = 0; j < 2; ++j) acc += w2.at(c, j, 0, 0) * hidden[j];
        const double gate = 1.0 / (1.0 + std::exp(-acc));
        CHECK(gate > 0.0);
        CHECK(gate < 1.0);
        for (int i = 0; i < 36; ++i) CHECK(y.value().plane(0, c)[i] == doctest::Approx(level[c] * gate).epsilon(1e-12));
    }
}

TEST_CASE("spatial attention never amplifies") {
    Rng rng(4);
    for (int trial = 0; trial < 5; ++trial) {
        auto op = make_candidate(OpKind::SpatialAtt, 5, 1, std::uint64_t(trial));
        const Var x = constant(random_tensor({2, 5, 9, 7}, rng, -3, 3));
        const Var y = op->apply(x);
        for (std::int64_t i = 0; i < x.value().numel(); ++i) {
            CHECK(std::abs(y.value()[i]) <= std::abs(x.value()[i]));
            if (x.value()[i] != 0) CHECK(std::abs(y.value()[i]) < std::abs(x.value()[i]));
        }
    }
}

TEST_CASE("double separable flag stacks two blocks") {
    OpOptions twice;
    twice.double_separable = true;
    auto once = make_candidate(OpKind::SepConv5, 4, 1, 1);
    auto two = make_candidate(OpKind::SepConv5, 4, 1, 1, twice);
    CHECK(two->parameter_count() == 2 * once->parameter_count());
}

TEST_CASE("analytic gradients of every op match finite differences") {
    Rng rng(31);
    for (OpKind k : kAllOps) {
        if (k == OpKind::Zero) continue;
        for (int stride : {1, 2}) {
            auto op = make_candidate(k, 4, stride, 1234);
            Var x = leaf_parameter(random_tensor({2, 4, 8, 8}, rng));
            const Tensor proj = random_tensor(op->output_shape(x.shape()), rng);
            std::vector<nasdet::testing::GradProbe> probes;
            for (int i = 0; i < 4; ++i) {
                const auto idx = std::int64_t(rng.uniform_int(0, int(x.value().numel()) - 1));
                probes.push_back({x, idx, "x"});
            }
            for (const auto& p : op->named_parameters()) {
                const auto idx = std::int64_t(rng.uniform_int(0, int(p.var.value().numel()) - 1));
                probes.push_back({p.var, idx, p.name});
            }
            const auto results =
                nasdet::testing::check_gradients([&] { return fn::dot(op->apply(x), proj); }, probes);
            for (const auto& r : results) {
                INFO(op_name(k) << " stride " << stride << " " << r.label << " analytic=" << r.analytic
                                << " numeric=" << r.numeric);
                CHECK(r.ok);
            }
        }
    }
}

}  // TEST_SUITE
