#pragma once

#include <cmath>
#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "fedhbn/layers.hpp"
#include "fedhbn/norm_layers.hpp"
#include "fedhbn/rng.hpp"

namespace fedhbn {

// Positionally aligned, named snapshot of the communicated parameters
// (weights, biases, norm affine terms). Statistical buffers and the
// client-local hybrid factor alpha are never part of it.
template <class T>
struct ModelParams {
    std::vector<std::string> names;
    std::vector<Tensor<T>> values;

    std::size_t size() const { return values.size(); }
};

template <class T>
class Model {
public:
    Model() = default;

    Model(const Model& o) {
        names_ = o.names_;
        layers_.reserve(o.layers_.size());
        for (const auto& l : o.layers_) layers_.push_back(l->clone());
    }
    Model& operator=(const Model& o) {
        if (this != &o) {
            Model tmp(o);
            *this = std::move(tmp);
        }
        return *this;
    }
    Model(Model&&) = default;
    Model& operator=(Model&&) = default;

    void add(std::string name, std::unique_ptr<Layer<T>> layer) {
        names_.push_back(std::move(name));
        layers_.push_back(std::move(layer));
    }

    std::size_t layer_count() const { return layers_.size(); }
    Layer<T>& layer(std::size_t i) { return *layers_[i]; }
    const std::string& layer_name(std::size_t i) const { return names_[i]; }

    Tensor<T> forward(const Tensor<T>& x, NormMode mode) {
        Tensor<T> cur = x;
        for (auto& l : layers_) cur = l->forward(cur, mode);
        return cur;
    }

    // Chains input gradients back through the layers; parameter gradients
    // land in the layers.
    void backward(const Tensor<T>& logit_grads) {
        Tensor<T> cur = logit_grads;
        for (std::size_t i = layers_.size(); i-- > 0;) cur = layers_[i]->backward(cur);
    }

    // Every gradient-updated parameter, alpha included.
    std::vector<ParamRef<T>> trainable_params() {
        std::vector<ParamRef<T>> out;
        for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i]->collect_params(names_[i], out);
        return out;
    }

    // The communicated subset (ModelParams ordering).
    std::vector<ParamRef<T>> shared_params() {
        std::vector<ParamRef<T>> out = trainable_params();
        std::erase_if(out, [](const ParamRef<T>& p) { return !p.shared; });
        return out;
    }

    std::vector<NormLayer<T>*> norm_layers() {
        std::vector<NormLayer<T>*> out;
        for (auto& l : layers_)
            if (auto* n = dynamic_cast<NormLayer<T>*>(l.get())) out.push_back(n);
        return out;
    }

    void set_round(int round) {
        for (auto& l : layers_) l->set_round(round);
    }

    void set_fixbn_freeze_round(int round) {
        for (auto* n : norm_layers())
            if (auto* f = dynamic_cast<FixBnNorm<T>*>(n)) f->set_freeze_round(round);
    }

    void set_buffer_updates(bool enabled) {
        for (auto* n : norm_layers()) n->set_buffer_updates(enabled);
    }

    ModelParams<T> extract_shared() {
        ModelParams<T> out;
        for (const auto& p : shared_params()) {
            out.names.push_back(p.name);
            out.values.push_back(*p.value);
        }
        return out;
    }

    void load_shared(const ModelParams<T>& params) {
        auto refs = shared_params();
        if (refs.size() != params.size())
            throw ProtocolError("load_shared: parameter count mismatch");
        for (std::size_t i = 0; i < refs.size(); ++i) {
            if (refs[i].name != params.names[i])
                throw ProtocolError("load_shared: parameter '" + params.names[i] +
                                    "' does not match model slot '" + refs[i].name + "'");
            check_same_shape(*refs[i].value, params.values[i], "load_shared");
            *refs[i].value = params.values[i];
        }
    }

    std::size_t trainable_count() {
        std::size_t n = 0;
        for (const auto& p : trainable_params()) n += p.value->size();
        return n;
    }

private:
    std::vector<std::string> names_;
    std::vector<std::unique_ptr<Layer<T>>> layers_;
};

template <class T>
std::unique_ptr<NormLayer<T>> make_norm_layer(NormKind kind, std::size_t channels, double eps,
                                              std::size_t gn_groups) {
    switch (kind) {
        case NormKind::Bn: return std::make_unique<BatchNorm<T>>(channels, eps);
        case NormKind::Gn: return std::make_unique<GroupNorm<T>>(channels, gn_groups, eps);
        case NormKind::Ln: return std::make_unique<LayerNorm<T>>(channels, eps);
        case NormKind::FixBn: return std::make_unique<FixBnNorm<T>>(channels, eps);
        case NormKind::Fbn: return std::make_unique<FbnNorm<T>>(channels, eps);
        case NormKind::Hbn: return std::make_unique<HbnNorm<T>>(channels, eps);
        case NormKind::None: return nullptr;
    }
    throw ConfigError("make_norm_layer: unknown kind");
}

// Three conv blocks (conv + norm + relu + maxpool) and two fully connected
// layers. For 32x32 inputs the flattened width is 64*4*4 = 1024.
template <class T>
Model<T> build_simple_cnn(std::size_t num_classes, NormKind norm, std::size_t image_hw = 32,
                          double eps = 1e-5, std::size_t gn_groups = 2) {
    if (num_classes == 0) throw ConfigError("build_simple_cnn: need at least one class");
    if (image_hw < 8) throw ConfigError("build_simple_cnn: image size must be >= 8");
    Model<T> m;
    const std::size_t chans[3] = {16, 32, 64};
    std::size_t in_ch = 3;
    std::size_t hw = image_hw;
    for (int b = 0; b < 3; ++b) {
        const std::string idx = std::to_string(b + 1);
        m.add("conv" + idx, std::make_unique<Conv2d<T>>(in_ch, chans[b], 3, 1, 1));
        if (auto n = make_norm_layer<T>(norm, chans[b], eps, gn_groups))
            m.add("norm" + idx, std::move(n));
        m.add("relu" + idx, std::make_unique<ReLU<T>>());
        m.add("pool" + idx, std::make_unique<MaxPool2d<T>>(2, 2));
        in_ch = chans[b];
        hw = (hw - 2) / 2 + 1;
    }
    const std::size_t flat = 64 * hw * hw;
    m.add("fc1", std::make_unique<Dense<T>>(flat, 128));
    m.add("relu4", std::make_unique<ReLU<T>>());
    m.add("fc2", std::make_unique<Dense<T>>(128, num_classes));
    return m;
}

// Kaiming-uniform fan-in initialization for conv/dense weights, zero biases.
// Norm layers keep gamma=1, beta=0, alpha=0.
template <class T>
void init_model(Model<T>& m, std::uint64_t seed) {
    auto rng = make_rng(seed);
    for (std::size_t i = 0; i < m.layer_count(); ++i) {
        Layer<T>& l = m.layer(i);
        if (auto* conv = dynamic_cast<Conv2d<T>*>(&l)) {
            const double bound = std::sqrt(6.0 / double(conv->fan_in()));
            std::uniform_real_distribution<double> dist(-bound, bound);
            for (auto& v : conv->weight().data) v = T(dist(rng));
            conv->bias().fill(T(0));
        } else if (auto* fc = dynamic_cast<Dense<T>*>(&l)) {
            const double bound = std::sqrt(6.0 / double(fc->fan_in()));
            std::uniform_real_distribution<double> dist(-bound, bound);
            for (auto& v : fc->weight().data) v = T(dist(rng));
            fc->bias().fill(T(0));
        }
    }
}

}  // namespace fedhbn
