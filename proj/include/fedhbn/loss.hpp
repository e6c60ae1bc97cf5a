#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "fedhbn/errors.hpp"
#include "fedhbn/tensor.hpp"

namespace fedhbn {

template <class T>
struct LossResult {
    double loss = 0.0;       // mean cross-entropy over the batch
    Tensor<T> logit_grads;   // (softmax - onehot) / N
};

// Mean softmax cross-entropy over a batch of logits (N, C).
template <class T>
LossResult<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> labels) {
    if (logits.ndim() != 2) throw ConfigError("softmax_cross_entropy: expected (N, C) logits");
    const std::size_t n = logits.dim(0), c = logits.dim(1);
    if (labels.size() != n) throw DataError("softmax_cross_entropy: label count mismatch");

    LossResult<T> res;
    res.logit_grads = Tensor<T>({n, c});
    double loss_acc = 0.0;
    std::vector<double> p(c);
    for (std::size_t i = 0; i < n; ++i) {
        const int y = labels[i];
        if (y < 0 || std::size_t(y) >= c)
            throw DataError("softmax_cross_entropy: label " + std::to_string(y) +
                            " out of range [0, " + std::to_string(c) + ")");
        const T* row = logits.data.data() + i * c;
        double mx = double(row[0]);
        for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, double(row[j]));
        double z = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            p[j] = std::exp(double(row[j]) - mx);
            z += p[j];
        }
        loss_acc += std::log(z) - (double(row[std::size_t(y)]) - mx);
        T* grow = res.logit_grads.data.data() + i * c;
        for (std::size_t j = 0; j < c; ++j) {
            double g = p[j] / z;
            if (j == std::size_t(y)) g -= 1.0;
            grow[j] = T(g / double(n));
        }
    }
    res.loss = loss_acc / double(n);
    return res;
}

}  // namespace fedhbn
