#pragma once

#include <algorithm>
#include <cstddef>
#include <memory>
#include <string>
#include <vector>

#include "fedhbn/errors.hpp"
#include "fedhbn/tensor.hpp"

namespace fedhbn {

// Train: batch statistics + gradient caches. Eval: frozen statistics, pure.
// CollectStats: Eval-mode normalization while recording input statistics,
// no gradients.
enum class NormMode { Train, Eval, CollectStats };

template <class T>
struct ParamRef {
    std::string name;
    Tensor<T>* value = nullptr;
    Tensor<T>* grad = nullptr;
    // Shared parameters form the communicated ModelParams. The hybrid factor
    // alpha is trainable but client-local, so it is registered as not shared.
    bool shared = true;
};

template <class T>
class Layer {
public:
    virtual ~Layer() = default;
    virtual Tensor<T> forward(const Tensor<T>& x, NormMode mode) = 0;
    // Gradients of the scalar loss w.r.t. layer input; parameter gradients
    // are stored in the layer and exposed through collect_params.
    virtual Tensor<T> backward(const Tensor<T>& upstream) = 0;
    virtual void collect_params(const std::string& /*prefix*/,
                                std::vector<ParamRef<T>>& /*out*/) {}
    virtual std::unique_ptr<Layer<T>> clone() const = 0;
    virtual const char* kind() const = 0;
    // Communication-round context, used by round-dependent layers (FixBN).
    virtual void set_round(int /*round*/) {}

protected:
    void require_cache(bool have, const char* who) const {
        if (!have) throw StateError(std::string(who) + ": backward without a Train-mode forward");
    }
};

inline std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t stride,
                                   std::size_t pad) {
    const std::size_t padded = in + 2 * pad;
    if (padded < k) throw ConfigError("conv/pool: kernel larger than padded input");
    return (padded - k) / stride + 1;
}

template <class T>
class Conv2d final : public Layer<T> {
public:
    Conv2d(std::size_t in_ch, std::size_t out_ch, std::size_t kernel, std::size_t stride,
           std::size_t pad)
        : in_ch_(in_ch),
          out_ch_(out_ch),
          k_(kernel),
          stride_(stride),
          pad_(pad),
          weight_({out_ch, in_ch, kernel, kernel}),
          bias_({out_ch}),
          weight_grad_({out_ch, in_ch, kernel, kernel}),
          bias_grad_({out_ch}) {
        if (kernel == 0 || stride == 0) throw ConfigError("conv2d: kernel and stride must be >= 1");
    }

    Tensor<T> forward(const Tensor<T>& x, NormMode mode) override {
        if (x.ndim() != 4) throw ConfigError("conv2d: expected NCHW input");
        if (x.dim(1) != in_ch_)
            throw ConfigError("conv2d: input has " + std::to_string(x.dim(1)) +
                              " channels, layer expects " + std::to_string(in_ch_));
        const std::size_t n = x.dim(0), h = x.dim(2), w = x.dim(3);
        const std::size_t oh = conv_out_extent(h, k_, stride_, pad_);
        const std::size_t ow = conv_out_extent(w, k_, stride_, pad_);
        Tensor<T> out({n, out_ch_, oh, ow});
        std::vector<double> acc(oh * ow);

        for (std::size_t ni = 0; ni < n; ++ni) {
            for (std::size_t oc = 0; oc < out_ch_; ++oc) {
                std::fill(acc.begin(), acc.end(), double(bias_.data[oc]));
                for (std::size_t ic = 0; ic < in_ch_; ++ic) {
                    const T* in_plane = x.data.data() + (ni * in_ch_ + ic) * h * w;
                    const T* w_plane = weight_.data.data() + (oc * in_ch_ + ic) * k_ * k_;
                    for (std::size_t kh = 0; kh < k_; ++kh) {
                        for (std::size_t kw = 0; kw < k_; ++kw) {
                            const double wv = double(w_plane[kh * k_ + kw]);
                            if (wv == 0.0) continue;
                            for (std::size_t r = 0; r < oh; ++r) {
                                const std::ptrdiff_t ih =
                                    std::ptrdiff_t(r * stride_ + kh) - std::ptrdiff_t(pad_);
                                if (ih < 0 || ih >= std::ptrdiff_t(h)) continue;
                                // valid column range for this kw
                                double* arow = acc.data() + r * ow;
                                const T* irow = in_plane + std::size_t(ih) * w;
                                for (std::size_t c = 0; c < ow; ++c) {
                                    const std::ptrdiff_t iw =
                                        std::ptrdiff_t(c * stride_ + kw) - std::ptrdiff_t(pad_);
                                    if (iw < 0 || iw >= std::ptrdiff_t(w)) continue;
                                    arow[c] += wv * double(irow[iw]);
                                }
                            }
                        }
                    }
                }
                T* orow = out.data.data() + (ni * out_ch_ + oc) * oh * ow;
                for (std::size_t i = 0; i < oh * ow; ++i) orow[i] = T(acc[i]);
            }
        }
        if (mode == NormMode::Train) {
            input_cache_ = x;
            have_cache_ = true;
        }
        return out;
    }

    Tensor<T> backward(const Tensor<T>& g) override {
        this->require_cache(have_cache_, "conv2d");
        const Tensor<T>& x = input_cache_;
        const std::size_t n = x.dim(0), h = x.dim(2), w = x.dim(3);
        const std::size_t oh = g.dim(2), ow = g.dim(3);
        if (g.dim(0) != n || g.dim(1) != out_ch_)
            throw ConfigError("conv2d backward: upstream shape mismatch");

        std::vector<double> dw(weight_.size(), 0.0);
        std::vector<double> db(out_ch_, 0.0);
        std::vector<double> dx(x.size(), 0.0);

        for (std::size_t ni = 0; ni < n; ++ni) {
            for (std::size_t oc = 0; oc < out_ch_; ++oc) {
                const T* gplane = g.data.data() + (ni * out_ch_ + oc) * oh * ow;
                double bsum = 0.0;
                for (std::size_t i = 0; i < oh * ow; ++i) bsum += double(gplane[i]);
                db[oc] += bsum;
                for (std::size_t ic = 0; ic < in_ch_; ++ic) {
                    const T* in_plane = x.data.data() + (ni * in_ch_ + ic) * h * w;
                    double* dx_plane = dx.data() + (ni * in_ch_ + ic) * h * w;
                    const T* w_plane = weight_.data.data() + (oc * in_ch_ + ic) * k_ * k_;
                    double* dw_plane = dw.data() + (oc * in_ch_ + ic) * k_ * k_;
                    for (std::size_t kh = 0; kh < k_; ++kh) {
                        for (std::size_t kw = 0; kw < k_; ++kw) {
                            const double wv = double(w_plane[kh * k_ + kw]);
                            double dwv = 0.0;
                            for (std::size_t r = 0; r < oh; ++r) {
                                const std::ptrdiff_t ih =
                                    std::ptrdiff_t(r * stride_ + kh) - std::ptrdiff_t(pad_);
                                if (ih < 0 || ih >= std::ptrdiff_t(h)) continue;
                                const T* irow = in_plane + std::size_t(ih) * w;
                                double* dxrow = dx_plane + std::size_t(ih) * w;
                                const T* grow = gplane + r * ow;
                                for (std::size_t c = 0; c < ow; ++c) {
                                    const std::ptrdiff_t iw =
                                        std::ptrdiff_t(c * stride_ + kw) - std::ptrdiff_t(pad_);
                                    if (iw < 0 || iw >= std::ptrdiff_t(w)) continue;
                                    const double gv = double(grow[c]);
                                    dwv += gv * double(irow[iw]);
                                    dxrow[iw] += gv * wv;
                                }
                            }
                            dw_plane[kh * k_ + kw] += dwv;
                        }
                    }
                }
            }
        }

        for (std::size_t i = 0; i < weight_grad_.size(); ++i) weight_grad_.data[i] = T(dw[i]);
        for (std::size_t i = 0; i < out_ch_; ++i) bias_grad_.data[i] = T(db[i]);
        Tensor<T> dxt(x.shape);
        for (std::size_t i = 0; i < dx.size(); ++i) dxt.data[i] = T(dx[i]);
        return dxt;
    }

    void collect_params(const std::string& prefix, std::vector<ParamRef<T>>& out) override {
        out.push_back({prefix + ".weight", &weight_, &weight_grad_, true});
        out.push_back({prefix + ".bias", &bias_, &bias_grad_, true});
    }

    std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Conv2d>(*this); }
    const char* kind() const override { return "conv2d"; }

    Tensor<T>& weight() { return weight_; }
    Tensor<T>& bias() { return bias_; }
    std::size_t fan_in() const { return in_ch_ * k_ * k_; }

private:
    std::size_t in_ch_, out_ch_, k_, stride_, pad_;
    Tensor<T> weight_, bias_;
    Tensor<T> weight_grad_, bias_grad_;
    Tensor<T> input_cache_;
    bool have_cache_ = false;
};

// Fully connected layer. Accepts (N, F) directly or NCHW input, which it
// treats as (N, C*H*W); the input gradient comes back in the cached shape.
template <class T>
class Dense final : public Layer<T> {
public:
    Dense(std::size_t in_features, std::size_t out_features)
        : in_f_(in_features),
          out_f_(out_features),
          weight_({out_features, in_features}),
          bias_({out_features}),
          weight_grad_({out_features, in_features}),
          bias_grad_({out_features}) {}

    Tensor<T> forward(const Tensor<T>& x, NormMode mode) override {
        const std::size_t n = x.dim(0);
        const std::size_t f = x.size() / n;
        if (f != in_f_)
            throw ConfigError("dense: input has " + std::to_string(f) + " features, expected " +
                              std::to_string(in_f_));
        Tensor<T> out({n, out_f_});
        for (std::size_t i = 0; i < n; ++i) {
            const T* xi = x.data.data() + i * in_f_;
            for (std::size_t o = 0; o < out_f_; ++o) {
                const T* wo = weight_.data.data() + o * in_f_;
                double acc = double(bias_.data[o]);
                for (std::size_t j = 0; j < in_f_; ++j) acc += double(wo[j]) * double(xi[j]);
                out.at2(i, o) = T(acc);
            }
        }
        if (mode == NormMode::Train) {
            input_cache_ = x;
            have_cache_ = true;
        }
        return out;
    }

    Tensor<T> backward(const Tensor<T>& g) override {
        this->require_cache(have_cache_, "dense");
        const Tensor<T>& x = input_cache_;
        const std::size_t n = x.dim(0);
        std::vector<double> dw(weight_.size(), 0.0);
        std::vector<double> db(out_f_, 0.0);
        Tensor<T> dx(x.shape);
        for (std::size_t i = 0; i < n; ++i) {
            const T* xi = x.data.data() + i * in_f_;
            T* dxi = dx.data.data() + i * in_f_;
            const T* gi = g.data.data() + i * out_f_;
            for (std::size_t o = 0; o < out_f_; ++o) {
                const double gv = double(gi[o]);
                db[o] += gv;
                const T* wo = weight_.data.data() + o * in_f_;
                double* dwo = dw.data() + o * in_f_;
                for (std::size_t j = 0; j < in_f_; ++j) {
                    dwo[j] += gv * double(xi[j]);
                    dxi[j] += T(gv * double(wo[j]));
                }
            }
        }
        for (std::size_t i = 0; i < weight_grad_.size(); ++i) weight_grad_.data[i] = T(dw[i]);
        for (std::size_t i = 0; i < out_f_; ++i) bias_grad_.data[i] = T(db[i]);
        return dx;
    }

    void collect_params(const std::string& prefix, std::vector<ParamRef<T>>& out) override {
        out.push_back({prefix + ".weight", &weight_, &weight_grad_, true});
        out.push_back({prefix + ".bias", &bias_, &bias_grad_, true});
    }

    std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Dense>(*this); }
    const char* kind() const override { return "dense"; }

    Tensor<T>& weight() { return weight_; }
    Tensor<T>& bias() { return bias_; }
    std::size_t fan_in() const { return in_f_; }

private:
    std::size_t in_f_, out_f_;
    Tensor<T> weight_, bias_;
    Tensor<T> weight_grad_, bias_grad_;
    Tensor<T> input_cache_;
    bool have_cache_ = false;
};

template <class T>
class ReLU final : public Layer<T> {
public:
    Tensor<T> forward(const Tensor<T>& x, NormMode mode) override {
        Tensor<T> out(x.shape);
        for (std::size_t i = 0; i < x.size(); ++i) out.data[i] = x.data[i] > T(0) ? x.data[i] : T(0);
        if (mode == NormMode::Train) {
            input_cache_ = x;
            have_cache_ = true;
        }
        return out;
    }

    Tensor<T> backward(const Tensor<T>& g) override {
        this->require_cache(have_cache_, "relu");
        check_same_shape(g, input_cache_, "relu backward");
        Tensor<T> dx(g.shape);
        for (std::size_t i = 0; i < g.size(); ++i)
            dx.data[i] = input_cache_.data[i] > T(0) ? g.data[i] : T(0);
        return dx;
    }

    std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<ReLU>(*this); }
    const char* kind() const override { return "relu"; }

private:
    Tensor<T> input_cache_;
    bool have_cache_ = false;
};

template <class T>
class MaxPool2d final : public Layer<T> {
public:
    MaxPool2d(std::size_t pool, std::size_t stride) : pool_(pool), stride_(stride) {
        if (pool == 0 || stride == 0) throw ConfigError("maxpool2d: pool and stride must be >= 1");
    }

    Tensor<T> forward(const Tensor<T>& x, NormMode mode) override {
        if (x.ndim() != 4) throw ConfigError("maxpool2d: expected NCHW input");
        const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
        const std::size_t oh = conv_out_extent(h, pool_, stride_, 0);
        const std::size_t ow = conv_out_extent(w, pool_, stride_, 0);
        Tensor<T> out({n, c, oh, ow});
        std::vector<std::size_t> argmax(out.size());
        for (std::size_t ni = 0; ni < n; ++ni) {
            for (std::size_t ci = 0; ci < c; ++ci) {
                const T* plane = x.data.data() + (ni * c + ci) * h * w;
                for (std::size_t r = 0; r < oh; ++r) {
                    for (std::size_t cc = 0; cc < ow; ++cc) {
                        T best{};
                        std::size_t best_idx = 0;
                        bool first = true;
                        for (std::size_t kh = 0; kh < pool_; ++kh) {
                            const std::size_t ih = r * stride_ + kh;
                            for (std::size_t kw = 0; kw < pool_; ++kw) {
                                const std::size_t iw = cc * stride_ + kw;
                                const T v = plane[ih * w + iw];
                                // strict > keeps the first (lowest-index) maximum
                                if (first || v > best) {
                                    best = v;
                                    best_idx = ih * w + iw;
                                    first = false;
                                }
                            }
                        }
                        const std::size_t oi = ((ni * c + ci) * oh + r) * ow + cc;
                        out.data[oi] = best;
                        argmax[oi] = best_idx;
                    }
                }
            }
        }
        if (mode == NormMode::Train) {
            argmax_ = std::move(argmax);
            input_shape_ = x.shape;
            have_cache_ = true;
        }
        return out;
    }

    Tensor<T> backward(const Tensor<T>& g) override {
        this->require_cache(have_cache_, "maxpool2d");
        const std::size_t n = g.dim(0), c = g.dim(1), oh = g.dim(2), ow = g.dim(3);
        const std::size_t h = input_shape_[2], w = input_shape_[3];
        Tensor<T> dx(input_shape_);
        for (std::size_t ni = 0; ni < n; ++ni) {
            for (std::size_t ci = 0; ci < c; ++ci) {
                T* dplane = dx.data.data() + (ni * c + ci) * h * w;
                for (std::size_t i = 0; i < oh * ow; ++i) {
                    const std::size_t oi = (ni * c + ci) * oh * ow + i;
                    dplane[argmax_[oi]] += g.data[oi];
                }
            }
        }
        return dx;
    }

    std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<MaxPool2d>(*this); }
    const char* kind() const override { return "maxpool2d"; }

private:
    std::size_t pool_, stride_;
    std::vector<std::size_t> argmax_;
    std::vector<std::size_t> input_shape_;
    bool have_cache_ = false;
};

}  // namespace fedhbn
