#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <sstream>

#include "fedhbn/checkpoint.hpp"
#include "fedhbn/stats.hpp"

using namespace fedhbn;

TEST_CASE("batch stats: constant input has zero variance") {
    Tensor<float> x({2, 3, 2, 2}, 4.5f);
    ChannelStats s = compute_batch_stats(x);
    REQUIRE(s.count == 8);  // N*H*W
    for (std::size_t c = 0; c < 3; ++c) {
        CHECK(s.mean(c) == Catch::Approx(4.5));
        CHECK(s.var_pop(c) == Catch::Approx(0.0).margin(1e-12));
    }
}

TEST_CASE("batch stats: hand-computed {0,2,4,6}") {
    Tensor<float> x({4, 1, 1, 1});
    x.data = {0.f, 2.f, 4.f, 6.f};
    ChannelStats s = compute_batch_stats(x);
    REQUIRE(s.count == 4);
    CHECK(s.mean(0) == Catch::Approx(3.0));
    CHECK(s.var_pop(0) == Catch::Approx(5.0));  // sum((x-3)^2)/4 = 20/4
}

TEST_CASE("batch stats rejects empty input") {
    Tensor<float> x;
    CHECK_THROWS_AS(compute_batch_stats(x), DataError);
}

TEST_CASE("merge of halves equals stats of the whole, exactly") {
    std::mt19937_64 rng(99);
    std::uniform_real_distribution<float> dist(-3.f, 3.f);
    for (int rep = 0; rep < 20; ++rep) {
        Tensor<float> a({3, 4, 2, 2}), b({5, 4, 2, 2}), whole({8, 4, 2, 2});
        for (auto& v : a.data) v = dist(rng);
        for (auto& v : b.data) v = dist(rng);
        std::copy(a.data.begin(), a.data.end(), whole.data.begin());
        std::copy(b.data.begin(), b.data.end(), whole.data.begin() + std::ptrdiff_t(a.size()));
        ChannelStats sa = compute_batch_stats(a);
        ChannelStats sb = compute_batch_stats(b);
        ChannelStats merged = sa;
        merged.merge(sb);
        ChannelStats direct = compute_batch_stats(whole);
        REQUIRE(merged.count == direct.count);
        for (std::size_t c = 0; c < 4; ++c) {
            CHECK(merged.sum[c] == direct.sum[c]);      // exact in the sums representation
            CHECK(merged.sumsq[c] == direct.sumsq[c]);
        }
    }
}

TEST_CASE("merge is commutative and associative, exactly") {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> dist(-2.0, 2.0);
    auto random_stats = [&]() {
        ChannelStats s(3);
        s.count = std::int64_t(rng() % 100 + 1);
        for (auto& v : s.sum) v = dist(rng);
        for (auto& v : s.sumsq) v = std::fabs(dist(rng));
        return s;
    };
    for (int rep = 0; rep < 50; ++rep) {
        ChannelStats a = random_stats(), b = random_stats(), c = random_stats();
        ChannelStats ab = a;
        ab.merge(b);
        ChannelStats ba = b;
        ba.merge(a);
        CHECK(ab == ba);
        ChannelStats ab_c = ab;
        ab_c.merge(c);
        ChannelStats bc = b;
        bc.merge(c);
        ChannelStats a_bc = a;
        a_bc.merge(bc);
        CHECK(ab_c == a_bc);
    }
}

TEST_CASE("variance clamp absorbs roundoff") {
    ChannelStats s(1);
    s.count = 2;
    s.sum[0] = 2.0;
    s.sumsq[0] = 2.0 - 1e-12;  // sumsq/count - mean^2 slightly negative
    CHECK(s.var_pop(0) == 0.0);
    CHECK(s.var_sample(0) == 0.0);
}

TEST_CASE("hybrid weights form a partition of unity") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> dist(-30.0, 30.0);
    for (int i = 0; i < 1000; ++i) {
        const double a = dist(rng);
        const MixWeights w = hybrid_weights(a);
        CHECK(w.batch + w.global == Catch::Approx(1.0).epsilon(1e-12));
        CHECK(w.batch >= 0.0);
        CHECK(w.global >= 0.0);
    }
}

TEST_CASE("hybrid mix: alpha 0 is the arithmetic mean") {
    std::vector<double> alpha{0.0, 0.0}, mb{1.0, -2.0}, vb{0.5, 1.5}, mg{3.0, 2.0}, vg{1.5, 0.5};
    std::vector<double> mm, mv;
    hybrid_mix(alpha, mb, vb, mg, vg, mm, mv);
    CHECK(mm[0] == Catch::Approx(2.0));
    CHECK(mm[1] == Catch::Approx(0.0));
    CHECK(mv[0] == Catch::Approx(1.0));
    CHECK(mv[1] == Catch::Approx(1.0));
}

TEST_CASE("hybrid mix: large |alpha| selects one side") {
    std::vector<double> mb{1.0}, vb{2.0}, mg{5.0}, vg{7.0}, mm, mv;
    hybrid_mix({40.0}, mb, vb, mg, vg, mm, mv);
    CHECK(mm[0] == Catch::Approx(5.0).epsilon(1e-12));
    CHECK(mv[0] == Catch::Approx(7.0).epsilon(1e-12));
    hybrid_mix({-40.0}, mb, vb, mg, vg, mm, mv);
    CHECK(mm[0] == Catch::Approx(1.0).epsilon(1e-12));
    CHECK(mv[0] == Catch::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("hybrid mix: alpha = ln 3 weights batch 1/4, global 3/4") {
    std::vector<double> mm, mv;
    hybrid_mix({std::log(3.0)}, {0.0}, {0.0}, {4.0}, {4.0}, mm, mv);
    CHECK(mm[0] == Catch::Approx(3.0).epsilon(1e-12));
    CHECK(mv[0] == Catch::Approx(3.0).epsilon(1e-12));
}

TEST_CASE("ema_update: lambda 1 replaces, small lambda blends") {
    CHECK(ema_update({0.0}, {1.0}, 1.0)[0] == 1.0);
    CHECK(ema_update({0.0}, {1.0}, 0.01)[0] == Catch::Approx(0.01));
    CHECK_THROWS_AS(ema_update({0.0}, {1.0}, 0.0), ConfigError);
    CHECK_THROWS_AS(ema_update({0.0}, {1.0}, 1.5), ConfigError);
    CHECK_THROWS_AS(ema_update({0.0}, {1.0}, -0.2), ConfigError);
}

TEST_CASE("ema_update converges geometrically to a constant target") {
    const double lambda = 0.25, target = 2.0;
    std::vector<double> cur{-1.0};
    for (int t = 1; t <= 12; ++t) {
        cur = ema_update(cur, {target}, lambda);
        const double expect = target + std::pow(1.0 - lambda, t) * (-1.0 - target);
        CHECK(cur[0] == Catch::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("channel stats serialization round-trips bit-exactly and merge survives") {
    std::mt19937_64 rng(2024);
    std::uniform_real_distribution<double> dist(-5.0, 5.0);
    auto random_stats = [&]() {
        ChannelStats s(4);
        s.count = std::int64_t(rng() % 1000 + 1);
        for (auto& v : s.sum) v = dist(rng) * 1e3;
        for (auto& v : s.sumsq) v = std::fabs(dist(rng)) * 1e3;
        return s;
    };
    for (int rep = 0; rep < 10; ++rep) {
        ChannelStats a = random_stats(), b = random_stats();
        std::stringstream buf;
        write_channel_stats(buf, a);
        write_channel_stats(buf, b);
        ChannelStats a2 = read_channel_stats(buf);
        ChannelStats b2 = read_channel_stats(buf);
        CHECK(a2 == a);
        CHECK(b2 == b);
        ChannelStats m1 = a;
        m1.merge(b);
        ChannelStats m2 = a2;
        m2.merge(b2);
        CHECK(m1 == m2);  // exact merge survives the round-trip
    }
}
