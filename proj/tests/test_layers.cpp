#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "fedhbn/gradcheck.hpp"
#include "fedhbn/layers.hpp"

using namespace fedhbn;

namespace {

// Independent six-nested-loop reference convolution (cross-correlation).
template <class T>
Tensor<T> reference_conv(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                         std::size_t stride, std::size_t pad) {
    const std::size_t n = x.dim(0), cin = x.dim(1), h = x.dim(2), ww = x.dim(3);
    const std::size_t cout = w.dim(0), k = w.dim(2);
    const std::size_t oh = (h + 2 * pad - k) / stride + 1;
    const std::size_t ow = (ww + 2 * pad - k) / stride + 1;
    Tensor<T> out({n, cout, oh, ow});
    for (std::size_t ni = 0; ni < n; ++ni)
        for (std::size_t oc = 0; oc < cout; ++oc)
            for (std::size_t r = 0; r < oh; ++r)
                for (std::size_t c = 0; c < ow; ++c) {
                    double acc = double(b.data[oc]);
                    for (std::size_t ic = 0; ic < cin; ++ic)
                        for (std::size_t kh = 0; kh < k; ++kh)
                            for (std::size_t kw = 0; kw < k; ++kw) {
                                const std::ptrdiff_t ih =
                                    std::ptrdiff_t(r * stride + kh) - std::ptrdiff_t(pad);
                                const std::ptrdiff_t iw =
                                    std::ptrdiff_t(c * stride + kw) - std::ptrdiff_t(pad);
                                if (ih < 0 || iw < 0 || ih >= std::ptrdiff_t(h) ||
                                    iw >= std::ptrdiff_t(ww))
                                    continue;
                                acc += double(x.at4(ni, ic, std::size_t(ih), std::size_t(iw))) *
                                       double(w.at4(oc, ic, kh, kw));
                            }
                    out.at4(ni, oc, r, c) = T(acc);
                }
    return out;
}

template <class T>
void fill_random(Tensor<T>& t, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> dist(lo, hi);
    for (auto& v : t.data) v = T(dist(rng));
}

// random values kept away from the ReLU kink / pool ties
template <class T>
void fill_random_offzero(Tensor<T>& t, std::mt19937_64& rng, double margin = 0.05) {
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    for (auto& v : t.data) {
        double x = dist(rng);
        while (std::fabs(x) < margin) x = dist(rng);
        v = T(x);
    }
}

}  // namespace

TEST_CASE("conv2d: zero input stays zero") {
    Conv2d<float> conv(2, 3, 3, 1, 1);
    std::mt19937_64 rng(1);
    fill_random(conv.weight(), rng);
    Tensor<float> x({2, 2, 4, 4});
    Tensor<float> y = conv.forward(x, NormMode::Eval);
    for (float v : y.data) CHECK(v == 0.0f);
}

TEST_CASE("conv2d: 1x1 scalar multiply") {
    Conv2d<float> conv(1, 1, 1, 1, 0);
    conv.weight().data[0] = 3.0f;
    Tensor<float> x({1, 1, 1, 1});
    x.data[0] = 2.0f;
    Tensor<float> y = conv.forward(x, NormMode::Eval);
    REQUIRE(y.size() == 1);
    CHECK(y.data[0] == 6.0f);
}

TEST_CASE("conv2d matches the six-nested-loop reference") {
    std::mt19937_64 rng(42);
    Conv2d<double> conv(3, 4, 3, 1, 1);
    fill_random(conv.weight(), rng);
    fill_random(conv.bias(), rng);
    Tensor<double> x({2, 3, 5, 5});
    fill_random(x, rng);
    Tensor<double> got = conv.forward(x, NormMode::Eval);
    Tensor<double> want = reference_conv(x, conv.weight(), conv.bias(), 1, 1);
    REQUIRE(got.shape == want.shape);
    for (std::size_t i = 0; i < got.size(); ++i)
        CHECK(got.data[i] == Catch::Approx(want.data[i]).epsilon(1e-12));
}

TEST_CASE("conv2d output shape follows the floor formula across random hypers") {
    std::mt19937_64 rng(5);
    for (int rep = 0; rep < 60; ++rep) {
        const std::size_t cin = 1 + rng() % 3, cout = 1 + rng() % 3;
        const std::size_t k = 1 + rng() % 3;
        const std::size_t stride = 1 + rng() % 2, pad = rng() % 2;
        const std::size_t h = k + rng() % 5, w = k + rng() % 5;
        Conv2d<double> conv(cin, cout, k, stride, pad);
        fill_random(conv.weight(), rng);
        Tensor<double> x({1, cin, h, w});
        fill_random(x, rng);
        Tensor<double> y = conv.forward(x, NormMode::Eval);
        CHECK(y.dim(2) == (h + 2 * pad - k) / stride + 1);
        CHECK(y.dim(3) == (w + 2 * pad - k) / stride + 1);
        Tensor<double> want = reference_conv(x, conv.weight(), conv.bias(), stride, pad);
        for (std::size_t i = 0; i < y.size(); ++i)
            CHECK(y.data[i] == Catch::Approx(want.data[i]).epsilon(1e-10).margin(1e-12));
    }
}

TEST_CASE("conv2d rejects channel mismatch") {
    Conv2d<float> conv(3, 4, 3, 1, 1);
    Tensor<float> x({1, 2, 5, 5});
    CHECK_THROWS_AS(conv.forward(x, NormMode::Eval), ConfigError);
}

TEST_CASE("conv2d gradients match central finite differences") {
    std::mt19937_64 rng(43);
    Conv2d<double> conv(3, 4, 3, 1, 1);
    fill_random(conv.weight(), rng);
    fill_random(conv.bias(), rng);
    Tensor<double> x({2, 3, 5, 5});
    fill_random(x, rng);
    const double err = layer_fd_check(conv, x, 1e-3, 77);
    CHECK(err < 1e-4);
}

TEST_CASE("conv2d with stride 2 gradients match finite differences") {
    std::mt19937_64 rng(44);
    Conv2d<double> conv(2, 3, 3, 2, 1);
    fill_random(conv.weight(), rng);
    fill_random(conv.bias(), rng);
    Tensor<double> x({2, 2, 6, 6});
    fill_random(x, rng);
    CHECK(layer_fd_check(conv, x, 1e-3, 78) < 1e-4);
}

TEST_CASE("relu: backward masks negative inputs") {
    ReLU<float> relu;
    Tensor<float> x({1, 2});
    x.data = {-1.f, 2.f};
    relu.forward(x, NormMode::Train);
    Tensor<float> up({1, 2}, 1.0f);
    Tensor<float> dx = relu.backward(up);
    CHECK(dx.data[0] == 0.0f);
    CHECK(dx.data[1] == 1.0f);
}

TEST_CASE("relu gradients match finite differences away from the kink") {
    std::mt19937_64 rng(45);
    ReLU<double> relu;
    Tensor<double> x({2, 3, 4, 4});
    fill_random_offzero(x, rng);
    CHECK(layer_fd_check(relu, x, 1e-3, 79) < 1e-4);
}

TEST_CASE("dense: input grad is W^T upstream on a 3x2 case") {
    Dense<double> fc(2, 3);
    fc.weight().data = {1.0, 2.0, 3.0, 4.0, 5.0, 6.0};  // (3,2) row-major
    fc.bias().fill(0.0);
    Tensor<double> x({1, 2});
    x.data = {0.5, -1.5};
    fc.forward(x, NormMode::Train);
    Tensor<double> up({1, 3});
    up.data = {1.0, -1.0, 2.0};
    Tensor<double> dx = fc.backward(up);
    // W^T up = [1*1 + 3*(-1) + 5*2, 2*1 + 4*(-1) + 6*2]
    CHECK(dx.data[0] == Catch::Approx(8.0));
    CHECK(dx.data[1] == Catch::Approx(10.0));
    CHECK(layer_fd_check(fc, x, 1e-3, 80) < 1e-4);
}

TEST_CASE("dense accepts NCHW input as flattened features") {
    Dense<float> fc(16, 4);
    std::mt19937_64 rng(9);
    fill_random(fc.weight(), rng);
    Tensor<float> x({2, 4, 2, 2});
    fill_random(x, rng);
    Tensor<float> y = fc.forward(x, NormMode::Train);
    REQUIRE(y.shape == std::vector<std::size_t>{2, 4});
    Tensor<float> up({2, 4}, 1.0f);
    Tensor<float> dx = fc.backward(up);
    CHECK(dx.shape == x.shape);  // gradient comes back in the cached shape
}

TEST_CASE("maxpool: forward picks the max, backward routes to first maximum") {
    MaxPool2d<float> pool(2, 2);
    Tensor<float> x({1, 1, 2, 4});
    x.data = {1.f, 3.f, 7.f, 7.f,
              2.f, 0.f, 5.f, 6.f};
    Tensor<float> y = pool.forward(x, NormMode::Train);
    REQUIRE(y.shape == std::vector<std::size_t>{1, 1, 1, 2});
    CHECK(y.data[0] == 3.0f);
    CHECK(y.data[1] == 7.0f);
    Tensor<float> up({1, 1, 1, 2});
    up.data = {1.0f, 1.0f};
    Tensor<float> dx = pool.backward(up);
    // the tie between the two 7s routes to the first (lowest index)
    CHECK(dx.data[1] == 1.0f);  // position of 3
    CHECK(dx.data[2] == 1.0f);  // first 7
    CHECK(dx.data[3] == 0.0f);  // second 7 gets nothing
}

TEST_CASE("maxpool gradients match finite differences with unique maxima") {
    std::mt19937_64 rng(46);
    MaxPool2d<double> pool(2, 2);
    Tensor<double> x({2, 2, 4, 4});
    // unique values guarantee stable argmax under the fd perturbation
    std::vector<double> vals(x.size());
    for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = double(i) * 0.1;
    std::shuffle(vals.begin(), vals.end(), rng);
    for (std::size_t i = 0; i < x.size(); ++i) x.data[i] = vals[i];
    CHECK(layer_fd_check(pool, x, 1e-3, 81) < 1e-4);
}

TEST_CASE("maxpool output shape follows the floor formula") {
    std::mt19937_64 rng(47);
    for (int rep = 0; rep < 40; ++rep) {
        const std::size_t p = 1 + rng() % 3, s = 1 + rng() % 3;
        const std::size_t h = p + rng() % 6, w = p + rng() % 6;
        MaxPool2d<double> pool(p, s);
        Tensor<double> x({1, 2, h, w});
        fill_random(x, rng);
        Tensor<double> y = pool.forward(x, NormMode::Eval);
        CHECK(y.dim(2) == (h - p) / s + 1);
        CHECK(y.dim(3) == (w - p) / s + 1);
    }
}

TEST_CASE("backward without a Train forward is a state error") {
    Conv2d<float> conv(1, 1, 3, 1, 1);
    Tensor<float> up({1, 1, 4, 4});
    CHECK_THROWS_AS(conv.backward(up), StateError);

    ReLU<float> relu;
    Tensor<float> x({1, 4});
    relu.forward(x, NormMode::Eval);  // Eval does not arm the cache
    CHECK_THROWS_AS(relu.backward(x), StateError);
}

TEST_CASE("eval forward is pure: repeated calls are bit-identical") {
    std::mt19937_64 rng(48);
    Conv2d<float> conv(2, 3, 3, 1, 1);
    fill_random(conv.weight(), rng);
    fill_random(conv.bias(), rng);
    Tensor<float> x({2, 2, 5, 5});
    fill_random(x, rng);
    Tensor<float> y1 = conv.forward(x, NormMode::Eval);
    Tensor<float> y2 = conv.forward(x, NormMode::Eval);
    CHECK(y1.data == y2.data);
}

TEST_CASE("forward then backward leaves parameters unchanged") {
    std::mt19937_64 rng(49);
    Conv2d<double> conv(2, 2, 3, 1, 1);
    fill_random(conv.weight(), rng);
    fill_random(conv.bias(), rng);
    const std::vector<double> w_before = conv.weight().data;
    const std::vector<double> b_before = conv.bias().data;
    Tensor<double> x({1, 2, 4, 4});
    fill_random(x, rng);
    Tensor<double> y = conv.forward(x, NormMode::Train);
    Tensor<double> up(y.shape, 1.0);
    conv.backward(up);
    CHECK(conv.weight().data == w_before);
    CHECK(conv.bias().data == b_before);
}
