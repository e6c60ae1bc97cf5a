#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "fedhbn/loss.hpp"
#include "fedhbn/optim.hpp"

using namespace fedhbn;

TEST_CASE("uniform logits give ln(C) loss") {
    Tensor<float> logits({3, 10}, 0.25f);
    std::vector<int> labels{0, 5, 9};
    auto res = softmax_cross_entropy(logits, std::span<const int>(labels));
    CHECK(res.loss == Catch::Approx(std::log(10.0)).epsilon(1e-6));
}

TEST_CASE("confident correct logits drive the loss to zero") {
    double prev = 1e9;
    for (double margin : {2.0, 5.0, 10.0, 20.0}) {
        Tensor<double> logits({1, 4});
        logits.data = {margin, 0.0, 0.0, 0.0};
        std::vector<int> labels{0};
        auto res = softmax_cross_entropy(logits, std::span<const int>(labels));
        CHECK(res.loss < prev);
        prev = res.loss;
    }
    CHECK(prev < 1e-8);
}

TEST_CASE("loss gradient matches finite differences") {
    std::mt19937_64 rng(31);
    std::uniform_real_distribution<double> dist(-2.0, 2.0);
    Tensor<double> logits({4, 5});
    for (auto& v : logits.data) v = dist(rng);
    std::vector<int> labels{1, 4, 0, 2};
    auto res = softmax_cross_entropy(logits, std::span<const int>(labels));
    const double step = 1e-6;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        const double saved = logits.data[i];
        logits.data[i] = saved + step;
        const double lp = softmax_cross_entropy(logits, std::span<const int>(labels)).loss;
        logits.data[i] = saved - step;
        const double lm = softmax_cross_entropy(logits, std::span<const int>(labels)).loss;
        logits.data[i] = saved;
        const double fd = (lp - lm) / (2 * step);
        CHECK(std::fabs(res.logit_grads.data[i] - fd) /
                  std::max({std::fabs(fd), std::fabs(double(res.logit_grads.data[i])), 1e-8}) <
              1e-5);
    }
}

TEST_CASE("label out of range is a data error") {
    Tensor<float> logits({2, 3});
    std::vector<int> bad{0, 3};
    CHECK_THROWS_AS(softmax_cross_entropy(logits, std::span<const int>(bad)), DataError);
    std::vector<int> neg{-1, 0};
    CHECK_THROWS_AS(softmax_cross_entropy(logits, std::span<const int>(neg)), DataError);
}

namespace {
struct OneParam {
    Tensor<double> p{{1}, 0.0};
    Tensor<double> g{{1}, 0.0};
    std::vector<ParamRef<double>> refs() { return {{"p", &p, &g, true}}; }
};
}  // namespace

TEST_CASE("sgd without momentum: p - lr*g") {
    OneParam s;
    s.p.data[0] = 1.0;
    s.g.data[0] = 2.0;
    SgdMomentum<double> opt(0.1, 0.0);
    opt.step(s.refs());
    CHECK(s.p.data[0] == Catch::Approx(0.8));
}

TEST_CASE("sgd momentum two-step hand-unrolled recurrence") {
    OneParam s;
    s.g.data[0] = 1.0;
    SgdMomentum<double> opt(1.0, 0.9);
    opt.step(s.refs());
    CHECK(s.p.data[0] == Catch::Approx(-1.0));  // v1 = 1
    opt.step(s.refs());
    CHECK(s.p.data[0] == Catch::Approx(-2.9));  // v2 = 0.9 + 1 = 1.9
}

TEST_CASE("zero learning rate leaves parameters unchanged") {
    OneParam s;
    s.p.data[0] = 3.5;
    s.g.data[0] = 123.0;
    SgdMomentum<double> opt(0.0, 0.9);
    opt.step(s.refs());
    opt.step(s.refs());
    CHECK(s.p.data[0] == 3.5);
}
