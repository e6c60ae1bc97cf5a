#pragma once

#include <random>
#include <string>
#include <vector>

#include "fedhbn/gradcheck.hpp"
#include "fedhbn/model.hpp"

namespace fedhbn {

struct GradSuiteEntry {
    std::string name;
    double max_rel_err = 0.0;
    double tolerance = 1e-4;
    bool pass() const { return max_rel_err < tolerance; }
};

namespace detail {

template <class T>
void fill_uniform(Tensor<T>& t, std::mt19937_64& rng, double lo, double hi) {
    std::uniform_real_distribution<double> dist(lo, hi);
    for (auto& v : t.data) v = T(dist(rng));
}

template <class T>
void fill_offzero(Tensor<T>& t, std::mt19937_64& rng, double margin) {
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    for (auto& v : t.data) {
        double x = dist(rng);
        while (std::fabs(x) < margin) x = dist(rng);
        v = T(x);
    }
}

inline void hbn_demo_stats(HbnNorm<double>& hbn, std::mt19937_64& rng) {
    std::vector<double> mean(hbn.channels()), var(hbn.channels());
    std::uniform_real_distribution<double> md(-0.5, 0.5), vd(0.5, 2.0);
    for (auto& v : mean) v = md(rng);
    for (auto& v : var) v = vd(rng);
    hbn.set_global_stats(mean, var, 64);
    std::uniform_real_distribution<double> ad(-0.8, 0.8);
    for (auto& v : hbn.alpha().data) v = ad(rng);
}

}  // namespace detail

// Central-difference verification of every layer's backward pass at 64-bit,
// step 1e-3 for the layer checks. Returns one entry per check.
inline std::vector<GradSuiteEntry> run_gradient_suite() {
    std::vector<GradSuiteEntry> out;
    std::mt19937_64 rng(20240901);
    const double step = 1e-3;

    {
        Conv2d<double> conv(3, 4, 3, 1, 1);
        detail::fill_uniform(conv.weight(), rng, -1, 1);
        detail::fill_uniform(conv.bias(), rng, -1, 1);
        Tensor<double> x({4, 3, 5, 5});
        detail::fill_uniform(x, rng, -1, 1);
        out.push_back({"conv2d", layer_fd_check(conv, x, step, 101)});
    }
    {
        Dense<double> fc(12, 7);
        detail::fill_uniform(fc.weight(), rng, -1, 1);
        detail::fill_uniform(fc.bias(), rng, -1, 1);
        Tensor<double> x({4, 12});
        detail::fill_uniform(x, rng, -1, 1);
        out.push_back({"dense", layer_fd_check(fc, x, step, 102)});
    }
    {
        ReLU<double> relu;
        Tensor<double> x({4, 3, 4, 4});
        detail::fill_offzero(x, rng, 0.05);
        out.push_back({"relu", layer_fd_check(relu, x, step, 103)});
    }
    {
        MaxPool2d<double> pool(2, 2);
        Tensor<double> x({4, 2, 4, 4});
        std::vector<double> vals(x.size());
        for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = 0.08 * double(i);
        std::shuffle(vals.begin(), vals.end(), rng);
        for (std::size_t i = 0; i < x.size(); ++i) x.data[i] = vals[i];
        out.push_back({"maxpool2d", layer_fd_check(pool, x, step, 104)});
    }
    {
        BatchNorm<double> bn(3);
        detail::fill_uniform(bn.gamma(), rng, 0.5, 1.5);
        detail::fill_uniform(bn.beta(), rng, -0.5, 0.5);
        Tensor<double> x({4, 3, 3, 3});
        detail::fill_uniform(x, rng, -1.5, 1.5);
        out.push_back({"bn", layer_fd_check(bn, x, step, 105)});
    }
    {
        GroupNorm<double> gn(4, 2);
        detail::fill_uniform(gn.gamma(), rng, 0.5, 1.5);
        detail::fill_uniform(gn.beta(), rng, -0.5, 0.5);
        Tensor<double> x({4, 4, 3, 3});
        detail::fill_uniform(x, rng, -1.5, 1.5);
        out.push_back({"gn", layer_fd_check(gn, x, step, 106)});
    }
    {
        LayerNorm<double> ln(4);
        detail::fill_uniform(ln.gamma(), rng, 0.5, 1.5);
        detail::fill_uniform(ln.beta(), rng, -0.5, 0.5);
        Tensor<double> x({4, 4, 3, 3});
        detail::fill_uniform(x, rng, -1.5, 1.5);
        out.push_back({"ln", layer_fd_check(ln, x, step, 107)});
    }
    {
        FbnNorm<double> fbn(3);
        detail::fill_uniform(fbn.gamma(), rng, 0.5, 1.5);
        detail::fill_uniform(fbn.beta(), rng, -0.5, 0.5);
        std::vector<double> mean{0.1, -0.2, 0.3}, var{1.2, 0.8, 1.5};
        fbn.set_running_stats(mean, var);
        Tensor<double> x({4, 3, 3, 3});
        detail::fill_uniform(x, rng, -1.5, 1.5);
        out.push_back({"fbn", layer_fd_check(fbn, x, step, 108)});
    }
    {
        FixBnNorm<double> fix(3);
        detail::fill_uniform(fix.gamma(), rng, 0.5, 1.5);
        Tensor<double> x({4, 3, 3, 3});
        detail::fill_uniform(x, rng, -1.5, 1.5);
        fix.set_freeze_round(10);
        fix.set_round(2);  // first stage: batch statistics
        out.push_back({"fixbn_stage1", layer_fd_check(fix, x, step, 109)});
        fix.set_round(30);  // second stage: frozen running statistics
        out.push_back({"fixbn_stage2", layer_fd_check(fix, x, step, 110)});
    }
    {
        HbnNorm<double> hbn(3);
        detail::fill_uniform(hbn.gamma(), rng, 0.5, 1.5);
        detail::fill_uniform(hbn.beta(), rng, -0.5, 0.5);
        detail::hbn_demo_stats(hbn, rng);
        Tensor<double> x({4, 3, 3, 3});
        detail::fill_uniform(x, rng, -1.5, 1.5);
        out.push_back({"hbn", layer_fd_check(hbn, x, step, 111)});
    }
    {
        // HBN on a degenerate single-element batch: the global mix keeps the
        // denominator positive
        HbnNorm<double> hbn(2);
        detail::hbn_demo_stats(hbn, rng);
        Tensor<double> x({1, 2, 1, 1});
        detail::fill_uniform(x, rng, -1.0, 1.0);
        out.push_back({"hbn_batch1", layer_fd_check(hbn, x, step, 112)});
    }

    // end-to-end Simple-CNN per normalizer, cross-entropy loss, batch 4
    for (NormKind kind : {NormKind::Hbn, NormKind::Bn, NormKind::Gn, NormKind::Ln, NormKind::Fbn,
                          NormKind::None}) {
        std::mt19937_64 mrng(1000 + std::uint64_t(kind));
        Model<double> model = build_simple_cnn<double>(5, kind, 8);
        init_model(model, 555);
        // move biases off zero so fewer pre-activations sit on the ReLU kink
        for (auto& p : model.trainable_params()) {
            if (p.name.find(".bias") != std::string::npos)
                detail::fill_uniform(*p.value, mrng, 0.05, 0.15);
        }
        for (auto* n : model.norm_layers()) {
            if (auto* h = n->as_hbn()) detail::hbn_demo_stats(*h, mrng);
        }
        Tensor<double> batch({4, 3, 8, 8});
        detail::fill_uniform(batch, mrng, -1.0, 1.0);
        std::vector<int> labels{0, 2, 4, 1};
        const double err = finite_difference_check(model, batch,
                                                   std::span<const int>(labels), 1e-4, 25);
        out.push_back({std::string("simple_cnn_") + norm_kind_name(kind), err});
    }
    return out;
}

}  // namespace fedhbn
