#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "fedhbn/loss.hpp"
#include "fedhbn/model.hpp"

namespace fedhbn {

inline double rel_grad_error(double bp, double fd) {
    const double denom = std::max({std::fabs(bp), std::fabs(fd), 1e-8});
    return std::fabs(bp - fd) / denom;
}

// Error for one coordinate. `loss_at(v)` evaluates the loss with the
// coordinate set to v. Differences below `atol` count as agreement. A
// suspicious coordinate is re-measured at step/4: if the two estimates
// drift apart the loss is not differentiable there (ReLU kink, pool-argmax
// flip) and central differences are no oracle, so the coordinate is skipped.
inline double fd_coord_error(const std::function<double(double)>& loss_at, double saved,
                             double bp, double step, double atol = 1e-7) {
    auto central = [&](double h) {
        const double lp = loss_at(saved + h);
        const double lm = loss_at(saved - h);
        return (lp - lm) / (2.0 * h);
    };
    const double fd = central(step);
    if (std::fabs(bp - fd) <= atol) return 0.0;
    const double err = rel_grad_error(bp, fd);
    if (err < 1e-5) return err;
    const double fd2 = central(step / 4.0);
    const double drift =
        std::fabs(fd2 - fd) / std::max({std::fabs(fd), std::fabs(fd2), 1e-12});
    if (drift > 0.05) return 0.0;
    if (std::fabs(bp - fd2) <= atol) return 0.0;
    return rel_grad_error(bp, fd2);
}

// Central finite differences over the coordinates of every trainable
// parameter, compared against one backward pass. `loss_fn` must be a pure
// function of the parameters (statistic-buffer updates are disabled for the
// duration of the check). `max_coords_per_param` == 0 checks everything;
// otherwise coordinates are sampled evenly through each tensor.
template <class T>
double max_rel_grad_error(Model<T>& model, const std::function<double()>& loss_fn,
                          const std::function<void()>& backward_fn, double step,
                          std::size_t max_coords_per_param = 0) {
    if (step == 0.0) throw std::invalid_argument("finite difference step must be nonzero");
    model.set_buffer_updates(false);
    backward_fn();  // runs forward + backward, fills parameter gradients

    auto params = model.trainable_params();
    std::vector<Tensor<T>> bp_grads;
    bp_grads.reserve(params.size());
    for (const auto& p : params) bp_grads.push_back(*p.grad);

    double worst = 0.0;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Tensor<T>& value = *params[pi].value;
        const std::size_t n = value.size();
        std::size_t stride = 1;
        if (max_coords_per_param > 0 && n > max_coords_per_param)
            stride = (n + max_coords_per_param - 1) / max_coords_per_param;
        for (std::size_t j = 0; j < n; j += stride) {
            const T saved = value.data[j];
            auto loss_at = [&](double v) {
                value.data[j] = T(v);
                const double l = loss_fn();
                value.data[j] = saved;
                return l;
            };
            worst = std::max(worst, fd_coord_error(loss_at, double(saved),
                                                   double(bp_grads[pi].data[j]), step));
        }
    }
    model.set_buffer_updates(true);
    return worst;
}

// Central-difference check of a whole model under mean cross-entropy:
// forward in Train mode, compare every parameter gradient (alpha included).
template <class T>
double finite_difference_check(Model<T>& model, const Tensor<T>& batch,
                               std::span<const int> labels, double step,
                               std::size_t max_coords_per_param = 0) {
    auto loss_fn = [&]() {
        Tensor<T> logits = model.forward(batch, NormMode::Train);
        return softmax_cross_entropy(logits, labels).loss;
    };
    auto backward_fn = [&]() {
        Tensor<T> logits = model.forward(batch, NormMode::Train);
        auto res = softmax_cross_entropy(logits, labels);
        model.backward(res.logit_grads);
    };
    return max_rel_grad_error(model, loss_fn, backward_fn, step, max_coords_per_param);
}

// Single-layer check under the linear functional loss = sum(R * output).
// Also differences the input coordinates against the returned input grad.
template <class T>
double layer_fd_check(Layer<T>& layer, Tensor<T> input, double step, std::uint64_t seed,
                      NormMode mode = NormMode::Train) {
    if (step == 0.0) throw std::invalid_argument("finite difference step must be nonzero");
    if (auto* norm = dynamic_cast<NormLayer<T>*>(&layer)) norm->set_buffer_updates(false);

    Tensor<T> probe;  // fixed random direction R
    {
        Tensor<T> out = layer.forward(input, mode);
        probe = Tensor<T>(out.shape);
        auto rng = make_rng(seed);
        std::uniform_real_distribution<double> dist(-1.0, 1.0);
        for (auto& v : probe.data) v = T(dist(rng));
    }
    auto loss_of = [&](const Tensor<T>& x) {
        Tensor<T> out = layer.forward(x, mode);
        double s = 0.0;
        for (std::size_t i = 0; i < out.size(); ++i) s += double(out.data[i]) * double(probe.data[i]);
        return s;
    };

    loss_of(input);  // leave a fresh Train cache in place
    Tensor<T> input_grad = layer.backward(probe);

    std::vector<ParamRef<T>> params;
    layer.collect_params("layer", params);
    std::vector<Tensor<T>> bp_grads;
    for (const auto& p : params) bp_grads.push_back(*p.grad);

    double worst = 0.0;
    for (std::size_t j = 0; j < input.size(); ++j) {
        const T saved = input.data[j];
        auto loss_at = [&](double v) {
            input.data[j] = T(v);
            const double l = loss_of(input);
            input.data[j] = saved;
            return l;
        };
        worst = std::max(worst,
                         fd_coord_error(loss_at, double(saved), double(input_grad.data[j]), step));
    }
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Tensor<T>& value = *params[pi].value;
        for (std::size_t j = 0; j < value.size(); ++j) {
            const T saved = value.data[j];
            auto loss_at = [&](double v) {
                value.data[j] = T(v);
                const double l = loss_of(input);
                value.data[j] = saved;
                return l;
            };
            worst = std::max(worst, fd_coord_error(loss_at, double(saved),
                                                   double(bp_grads[pi].data[j]), step));
        }
    }
    if (auto* norm = dynamic_cast<NormLayer<T>*>(&layer)) norm->set_buffer_updates(true);
    return worst;
}

}  // namespace fedhbn
