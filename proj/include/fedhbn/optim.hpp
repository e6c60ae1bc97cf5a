#pragma once

#include <vector>

#include "fedhbn/layers.hpp"

namespace fedhbn {

// Classical momentum SGD: v <- m*v + g; p <- p - lr*v.
template <class T>
class SgdMomentum {
public:
    SgdMomentum(double lr, double momentum) : lr_(lr), momentum_(momentum) {}

    double lr() const { return lr_; }
    void set_lr(double lr) { lr_ = lr; }
    double momentum() const { return momentum_; }

    void step(const std::vector<ParamRef<T>>& params) {
        if (velocity_.empty()) {
            velocity_.reserve(params.size());
            for (const auto& p : params) velocity_.emplace_back(p.value->shape);
        }
        if (velocity_.size() != params.size())
            throw StateError("sgd: parameter list changed between steps");
        for (std::size_t i = 0; i < params.size(); ++i) {
            Tensor<T>& v = velocity_[i];
            Tensor<T>& p = *params[i].value;
            const Tensor<T>& g = *params[i].grad;
            check_same_shape(p, g, "sgd step");
            check_same_shape(p, v, "sgd velocity");
            for (std::size_t j = 0; j < p.size(); ++j) {
                v.data[j] = T(momentum_ * double(v.data[j]) + double(g.data[j]));
                p.data[j] = T(double(p.data[j]) - lr_ * double(v.data[j]));
            }
        }
    }

    void reset() { velocity_.clear(); }

private:
    double lr_;
    double momentum_;
    std::vector<Tensor<T>> velocity_;
};

}  // namespace fedhbn
