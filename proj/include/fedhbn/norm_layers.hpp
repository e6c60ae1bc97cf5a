#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "fedhbn/layers.hpp"
#include "fedhbn/stats.hpp"

namespace fedhbn {

enum class NormKind { Bn, Gn, Ln, FixBn, Fbn, Hbn, None };

inline const char* norm_kind_name(NormKind k) {
    switch (k) {
        case NormKind::Bn: return "bn";
        case NormKind::Gn: return "gn";
        case NormKind::Ln: return "ln";
        case NormKind::FixBn: return "fixbn";
        case NormKind::Fbn: return "fbn";
        case NormKind::Hbn: return "hbn";
        case NormKind::None: return "none";
    }
    return "?";
}

inline NormKind parse_norm_kind(const std::string& s) {
    if (s == "bn") return NormKind::Bn;
    if (s == "gn") return NormKind::Gn;
    if (s == "ln") return NormKind::Ln;
    if (s == "fixbn") return NormKind::FixBn;
    if (s == "fbn") return NormKind::Fbn;
    if (s == "hbn") return NormKind::Hbn;
    if (s == "none") return NormKind::None;
    throw ConfigError("unknown norm kind '" + s + "'");
}

template <class T>
struct ChannelLayout {
    std::size_t n, c, spatial;
};

template <class T>
ChannelLayout<T> channel_layout(const Tensor<T>& x) {
    if (x.ndim() == 4) return {x.dim(0), x.dim(1), x.dim(2) * x.dim(3)};
    if (x.ndim() == 2) return {x.dim(0), x.dim(1), 1};
    throw ConfigError("norm layer: expected NCHW or (N,F) input");
}

template <class T>
class HbnNorm;
template <class T>
class RunningNorm;

// Base for every normalization layer: per-channel affine (gamma, beta),
// CollectStats accumulation of input statistics, and a switch that lets the
// gradient checker disable statistic-buffer writes so repeated forwards are
// pure.
template <class T>
class NormLayer : public Layer<T> {
public:
    NormLayer(std::size_t channels, double eps)
        : channels_(channels),
          eps_(eps),
          gamma_({channels}, T(1)),
          beta_({channels}, T(0)),
          gamma_grad_({channels}),
          beta_grad_({channels}) {
        if (eps <= 0.0) throw ConfigError("norm layer: epsilon must be > 0");
    }

    std::size_t channels() const { return channels_; }
    double epsilon() const { return eps_; }
    virtual NormKind norm_kind() const = 0;

    const ChannelStats& collected_stats() const { return collected_; }
    void reset_collected_stats() { collected_ = ChannelStats(channels_); }

    virtual HbnNorm<T>* as_hbn() { return nullptr; }
    virtual RunningNorm<T>* as_running() { return nullptr; }

    void set_buffer_updates(bool enabled) { buffer_updates_ = enabled; }

    void collect_params(const std::string& prefix, std::vector<ParamRef<T>>& out) override {
        out.push_back({prefix + ".gamma", &gamma_, &gamma_grad_, true});
        out.push_back({prefix + ".beta", &beta_, &beta_grad_, true});
    }

    Tensor<T>& gamma() { return gamma_; }
    Tensor<T>& beta() { return beta_; }

protected:
    void check_channels(const ChannelLayout<T>& lay) const {
        if (lay.c != channels_)
            throw ConfigError(std::string("norm layer: input has ") + std::to_string(lay.c) +
                              " channels, layer expects " + std::to_string(channels_));
    }

    void record_input(const Tensor<T>& x) {
        if (collected_.sum.empty()) collected_ = ChannelStats(channels_);
        accumulate_channel_stats(x, collected_);
    }

    // y = gamma * (x - mean)/sqrt(var + eps) + beta with fixed per-channel
    // statistics. Used by Eval, CollectStats and the frozen-statistics
    // training paths (FBN, FixBN stage two).
    Tensor<T> frozen_normalize(const Tensor<T>& x, const std::vector<double>& mean,
                               const std::vector<double>& var, bool cache_for_backward) {
        const auto lay = channel_layout(x);
        check_channels(lay);
        Tensor<T> out(x.shape);
        Tensor<T> xhat(x.shape);
        std::vector<double> inv(channels_);
        for (std::size_t c = 0; c < channels_; ++c) inv[c] = 1.0 / std::sqrt(var[c] + eps_);
        for (std::size_t i = 0; i < lay.n; ++i) {
            for (std::size_t c = 0; c < channels_; ++c) {
                const T* px = x.data.data() + (i * channels_ + c) * lay.spatial;
                T* po = out.data.data() + (i * channels_ + c) * lay.spatial;
                T* ph = xhat.data.data() + (i * channels_ + c) * lay.spatial;
                const double g = double(gamma_.data[c]), b = double(beta_.data[c]);
                for (std::size_t k = 0; k < lay.spatial; ++k) {
                    const double h = (double(px[k]) - mean[c]) * inv[c];
                    ph[k] = T(h);
                    po[k] = T(g * h + b);
                }
            }
        }
        if (cache_for_backward) {
            frozen_xhat_ = std::move(xhat);
            frozen_inv_ = std::move(inv);
            frozen_cache_ = true;
        }
        return out;
    }

    // Backward for the frozen-statistics path: statistics are constants.
    Tensor<T> frozen_backward(const Tensor<T>& g) {
        this->require_cache(frozen_cache_, norm_kind_name(norm_kind()));
        const auto lay = channel_layout(g);
        check_channels(lay);
        Tensor<T> dx(g.shape);
        std::vector<double> dgamma(channels_, 0.0), dbeta(channels_, 0.0);
        for (std::size_t i = 0; i < lay.n; ++i) {
            for (std::size_t c = 0; c < channels_; ++c) {
                const T* pg = g.data.data() + (i * channels_ + c) * lay.spatial;
                const T* ph = frozen_xhat_.data.data() + (i * channels_ + c) * lay.spatial;
                T* pd = dx.data.data() + (i * channels_ + c) * lay.spatial;
                const double gi = double(gamma_.data[c]) * frozen_inv_[c];
                for (std::size_t k = 0; k < lay.spatial; ++k) {
                    const double gv = double(pg[k]);
                    dgamma[c] += gv * double(ph[k]);
                    dbeta[c] += gv;
                    pd[k] = T(gv * gi);
                }
            }
        }
        for (std::size_t c = 0; c < channels_; ++c) {
            gamma_grad_.data[c] = T(dgamma[c]);
            beta_grad_.data[c] = T(dbeta[c]);
        }
        return dx;
    }

    std::size_t channels_;
    double eps_;
    Tensor<T> gamma_, beta_, gamma_grad_, beta_grad_;
    ChannelStats collected_;
    bool buffer_updates_ = true;

    Tensor<T> frozen_xhat_;
    std::vector<double> frozen_inv_;
    bool frozen_cache_ = false;
};

// Per-channel batch statistics of a tensor, as doubles, population variance.
template <class T>
void batch_mean_var(const Tensor<T>& x, std::vector<double>& mean, std::vector<double>& var) {
    const ChannelStats s = compute_batch_stats(x);
    mean = s.means();
    var = s.vars_pop();
}

// Hybrid Batch Normalisation. Train mode mixes current-batch statistics with
// frozen global statistics through a per-channel learnable factor alpha;
// Eval and CollectStats normalize with the global statistics alone.
template <class T>
class HbnNorm final : public NormLayer<T> {
public:
    HbnNorm(std::size_t channels, double eps = 1e-5)
        : NormLayer<T>(channels, eps),
          alpha_({channels}, T(0)),
          alpha_grad_({channels}),
          global_mean_(channels, 0.0),
          global_var_(channels, 1.0) {}

    NormKind norm_kind() const override { return NormKind::Hbn; }
    HbnNorm<T>* as_hbn() override { return this; }

    Tensor<T> forward(const Tensor<T>& x, NormMode mode) override {
        const auto lay = channel_layout(x);
        this->check_channels(lay);
        if (mode == NormMode::Eval) {
            if (!has_global_) throw StateError("hbn: global statistics not initialized for Eval");
            return this->frozen_normalize(x, global_mean_, global_var_, false);
        }
        if (mode == NormMode::CollectStats) {
            this->record_input(x);
            // pre-bootstrap the defaults (mean 0, var 1) stand in for globals
            return this->frozen_normalize(x, global_mean_, global_var_, false);
        }
        return train_forward(x, lay);
    }

    Tensor<T> backward(const Tensor<T>& g) override {
        this->require_cache(have_cache_, "hbn");
        const auto lay = channel_layout(g);
        this->check_channels(lay);
        const std::size_t C = this->channels_;
        const double m = double(cache_m_);
        Tensor<T> dx(g.shape);
        std::vector<double> sg(C, 0.0), sgx(C, 0.0);
        for (std::size_t i = 0; i < lay.n; ++i) {
            for (std::size_t c = 0; c < C; ++c) {
                const T* pg = g.data.data() + (i * C + c) * lay.spatial;
                const T* ph = xhat_.data.data() + (i * C + c) * lay.spatial;
                for (std::size_t k = 0; k < lay.spatial; ++k) {
                    sg[c] += double(pg[k]);
                    sgx[c] += double(pg[k]) * double(ph[k]);
                }
            }
        }
        // u_i = (x_i - mu_b) * inv = xhat_i + (mu_hat - mu_b) * inv
        for (std::size_t i = 0; i < lay.n; ++i) {
            for (std::size_t c = 0; c < C; ++c) {
                const T* pg = g.data.data() + (i * C + c) * lay.spatial;
                const T* ph = xhat_.data.data() + (i * C + c) * lay.spatial;
                T* pd = dx.data.data() + (i * C + c) * lay.spatial;
                const double gam = double(this->gamma_.data[c]);
                const double inv = inv_[c];
                const double wb = wbatch_[c];
                const double shift = shift_[c];
                const double a = gam * inv;
                const double t1 = (wb / m) * sg[c];
                const double t2 = (wb / m) * sgx[c];
                for (std::size_t k = 0; k < lay.spatial; ++k) {
                    const double u = double(ph[k]) + shift;
                    pd[k] = T(a * (double(pg[k]) - t1 - t2 * u));
                }
            }
        }
        for (std::size_t c = 0; c < C; ++c) {
            this->gamma_grad_.data[c] = T(sgx[c]);
            this->beta_grad_.data[c] = T(sg[c]);
            // d mu_hat / d alpha = s(a)s(-a)(mu_g - mu_b), same for variances
            const double gam = double(this->gamma_.data[c]);
            const double inv = inv_[c];
            const double sw = wglobal_[c] * wbatch_[c];
            const double dmean = global_mean_[c] - batch_mean_[c];
            const double dvar = global_var_[c] - batch_var_[c];
            const double da =
                -sw * gam * (inv * sg[c] * dmean + 0.5 * inv * inv * sgx[c] * dvar);
            alpha_grad_.data[c] = T(da);
        }
        return dx;
    }

    void collect_params(const std::string& prefix, std::vector<ParamRef<T>>& out) override {
        NormLayer<T>::collect_params(prefix, out);
        out.push_back({prefix + ".alpha", &alpha_, &alpha_grad_, /*shared=*/false});
    }

    std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<HbnNorm>(*this); }
    const char* kind() const override { return "hbn"; }

    Tensor<T>& alpha() { return alpha_; }

    bool has_global_stats() const { return has_global_; }
    const std::vector<double>& global_mean() const { return global_mean_; }
    const std::vector<double>& global_var() const { return global_var_; }
    std::int64_t global_count() const { return global_count_; }

    void set_global_stats(std::vector<double> mean, std::vector<double> var, std::int64_t count) {
        if (mean.size() != this->channels_ || var.size() != this->channels_)
            throw DataError("hbn: global stats channel mismatch");
        for (double v : var)
            if (v < 0.0) throw DataError("hbn: negative global variance");
        global_mean_ = std::move(mean);
        global_var_ = std::move(var);
        global_count_ = count;
        has_global_ = true;
    }

private:
    Tensor<T> train_forward(const Tensor<T>& x, const ChannelLayout<T>& lay) {
        const std::size_t C = this->channels_;
        batch_mean_var(x, batch_mean_, batch_var_);
        mixed_mean_.resize(C);
        mixed_var_.resize(C);
        inv_.resize(C);
        wbatch_.resize(C);
        wglobal_.resize(C);
        shift_.resize(C);
        for (std::size_t c = 0; c < C; ++c) {
            const MixWeights w = hybrid_weights(double(alpha_.data[c]));
            wbatch_[c] = w.batch;
            wglobal_[c] = w.global;
            mixed_mean_[c] = w.batch * batch_mean_[c] + w.global * global_mean_[c];
            mixed_var_[c] = w.batch * batch_var_[c] + w.global * global_var_[c];
            inv_[c] = 1.0 / std::sqrt(mixed_var_[c] + this->eps_);
            shift_[c] = (mixed_mean_[c] - batch_mean_[c]) * inv_[c];
        }
        Tensor<T> out(x.shape);
        xhat_ = Tensor<T>(x.shape);
        for (std::size_t i = 0; i < lay.n; ++i) {
            for (std::size_t c = 0; c < C; ++c) {
                const T* px = x.data.data() + (i * C + c) * lay.spatial;
                T* po = out.data.data() + (i * C + c) * lay.spatial;
                T* ph = xhat_.data.data() + (i * C + c) * lay.spatial;
                const double g = double(this->gamma_.data[c]), b = double(this->beta_.data[c]);
                for (std::size_t k = 0; k < lay.spatial; ++k) {
                    const double hv = (double(px[k]) - mixed_mean_[c]) * inv_[c];
                    ph[k] = T(hv);
                    po[k] = T(g * hv + b);
                }
            }
        }
        cache_m_ = lay.n * lay.spatial;
        have_cache_ = true;
        return out;
    }

    Tensor<T> alpha_, alpha_grad_;
    std::vector<double> global_mean_, global_var_;
    std::int64_t global_count_ = 0;
    bool has_global_ = false;

    // train cache
    Tensor<T> xhat_;
    std::vector<double> batch_mean_, batch_var_, mixed_mean_, mixed_var_, inv_, wbatch_, wglobal_,
        shift_;
    std::size_t cache_m_ = 0;
    bool have_cache_ = false;
};

// Base for the running-statistics family (BN, FixBN, FBN).
template <class T>
class RunningNorm : public NormLayer<T> {
public:
    RunningNorm(std::size_t channels, double eps, double momentum)
        : NormLayer<T>(channels, eps),
          momentum_(momentum),
          running_mean_(channels, 0.0),
          running_var_(channels, 1.0) {}

    RunningNorm<T>* as_running() override { return this; }

    const std::vector<double>& running_mean() const { return running_mean_; }
    const std::vector<double>& running_var() const { return running_var_; }
    void set_running_stats(std::vector<double> mean, std::vector<double> var) {
        if (mean.size() != this->channels_ || var.size() != this->channels_)
            throw DataError("running stats: channel mismatch");
        running_mean_ = std::move(mean);
        running_var_ = std::move(var);
    }

protected:
    // running <- momentum * running + (1 - momentum) * batch
    void ema_into_running(const std::vector<double>& mean, const std::vector<double>& var) {
        if (!this->buffer_updates_) return;
        for (std::size_t c = 0; c < this->channels_; ++c) {
            running_mean_[c] = momentum_ * running_mean_[c] + (1.0 - momentum_) * mean[c];
            running_var_[c] = momentum_ * running_var_[c] + (1.0 - momentum_) * var[c];
        }
    }

    double momentum_;
    std::vector<double> running_mean_, running_var_;
};

// Standard batch normalization: batch statistics in Train (with a running
// EMA for evaluation), running statistics in Eval.
template <class T>
class BatchNorm : public RunningNorm<T> {
public:
    BatchNorm(std::size_t channels, double eps = 1e-5, double momentum = 0.9)
        : RunningNorm<T>(channels, eps, momentum) {}

    NormKind norm_kind() const override { return NormKind::Bn; }

    Tensor<T> forward(const Tensor<T>& x, NormMode mode) override {
        const auto lay = channel_layout(x);
        this->check_channels(lay);
        if (mode == NormMode::Eval)
            return this->frozen_normalize(x, this->running_mean_, this->running_var_, false);
        if (mode == NormMode::CollectStats) {
            this->record_input(x);
            return this->frozen_normalize(x, this->running_mean_, this->running_var_, false);
        }
        return batch_train_forward(x, lay);
    }

    Tensor<T> backward(const Tensor<T>& g) override {
        this->require_cache(have_cache_, "bn");
        const auto lay = channel_layout(g);
        this->check_channels(lay);
        const std::size_t C = this->channels_;
        const double m = double(cache_m_);
        std::vector<double> sg(C, 0.0), sgx(C, 0.0);
        for (std::size_t i = 0; i < lay.n; ++i) {
            for (std::size_t c = 0; c < C; ++c) {
                const T* pg = g.data.data() + (i * C + c) * lay.spatial;
                const T* ph = xhat_.data.data() + (i * C + c) * lay.spatial;
                for (std::size_t k = 0; k < lay.spatial; ++k) {
                    sg[c] += double(pg[k]);
                    sgx[c] += double(pg[k]) * double(ph[k]);
                }
            }
        }
        Tensor<T> dx(g.shape);
        for (std::size_t i = 0; i < lay.n; ++i) {
            for (std::size_t c = 0; c < C; ++c) {
                const T* pg = g.data.data() + (i * C + c) * lay.spatial;
                const T* ph = xhat_.data.data() + (i * C + c) * lay.spatial;
                T* pd = dx.data.data() + (i * C + c) * lay.spatial;
                const double a = double(this->gamma_.data[c]) * inv_[c];
                const double t1 = sg[c] / m;
                const double t2 = sgx[c] / m;
                for (std::size_t k = 0; k < lay.spatial; ++k)
                    pd[k] = T(a * (double(pg[k]) - t1 - t2 * double(ph[k])));
            }
        }
        for (std::size_t c = 0; c < C; ++c) {
            this->gamma_grad_.data[c] = T(sgx[c]);
            this->beta_grad_.data[c] = T(sg[c]);
        }
        return dx;
    }

    std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<BatchNorm>(*this); }
    const char* kind() const override { return "bn"; }

protected:
    Tensor<T> batch_train_forward(const Tensor<T>& x, const ChannelLayout<T>& lay) {
        if (lay.n < 2)
            throw DataError("bn: Train mode requires batch size >= 2");
        const std::size_t C = this->channels_;
        std::vector<double> mean, var;
        batch_mean_var(x, mean, var);
        this->ema_into_running(mean, var);
        inv_.resize(C);
        for (std::size_t c = 0; c < C; ++c) inv_[c] = 1.0 / std::sqrt(var[c] + this->eps_);
        Tensor<T> out(x.shape);
        xhat_ = Tensor<T>(x.shape);
        for (std::size_t i = 0; i < lay.n; ++i) {
            for (std::size_t c = 0; c < C; ++c) {
                const T* px = x.data.data() + (i * C + c) * lay.spatial;
                T* po = out.data.data() + (i * C + c) * lay.spatial;
                T* ph = xhat_.data.data() + (i * C + c) * lay.spatial;
                const double g = double(this->gamma_.data[c]), b = double(this->beta_.data[c]);
                for (std::size_t k = 0; k < lay.spatial; ++k) {
                    const double hv = (double(px[k]) - mean[c]) * inv_[c];
                    ph[k] = T(hv);
                    po[k] = T(g * hv + b);
                }
            }
        }
        cache_m_ = lay.n * lay.spatial;
        have_cache_ = true;
        return out;
    }

    Tensor<T> xhat_;
    std::vector<double> inv_;
    std::size_t cache_m_ = 0;
    bool have_cache_ = false;
};

// FixBN two-stage scheme: plain BN until the freeze round, frozen running
// statistics afterwards (even in Train mode).
template <class T>
class FixBnNorm final : public BatchNorm<T> {
public:
    FixBnNorm(std::size_t channels, double eps = 1e-5, double momentum = 0.9)
        : BatchNorm<T>(channels, eps, momentum) {}

    NormKind norm_kind() const override { return NormKind::FixBn; }

    void set_round(int round) override { current_round_ = round; }
    void set_freeze_round(int round) { freeze_round_ = round; }
    int freeze_round() const { return freeze_round_; }
    bool frozen_stage() const { return freeze_round_ > 0 && current_round_ > freeze_round_; }

    Tensor<T> forward(const Tensor<T>& x, NormMode mode) override {
        if (mode == NormMode::Train && frozen_stage()) {
            const auto lay = channel_layout(x);
            this->check_channels(lay);
            return this->frozen_normalize(x, this->running_mean_, this->running_var_, true);
        }
        return BatchNorm<T>::forward(x, mode);
    }

    Tensor<T> backward(const Tensor<T>& g) override {
        if (frozen_stage()) return this->frozen_backward(g);
        return BatchNorm<T>::backward(g);
    }

    std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<FixBnNorm>(*this); }
    const char* kind() const override { return "fixbn"; }

private:
    int freeze_round_ = 0;  // 0 = never freezes until configured
    int current_round_ = 0;
};

// Federated Batch Normalisation: normalizes with running statistics even in
// Train mode; batch statistics only feed the EMA, after the batch has been
// normalized with the pre-update values.
template <class T>
class FbnNorm final : public RunningNorm<T> {
public:
    FbnNorm(std::size_t channels, double eps = 1e-5, double momentum = 0.9)
        : RunningNorm<T>(channels, eps, momentum) {}

    NormKind norm_kind() const override { return NormKind::Fbn; }

    Tensor<T> forward(const Tensor<T>& x, NormMode mode) override {
        const auto lay = channel_layout(x);
        this->check_channels(lay);
        if (mode == NormMode::Eval)
            return this->frozen_normalize(x, this->running_mean_, this->running_var_, false);
        if (mode == NormMode::CollectStats) {
            this->record_input(x);
            return this->frozen_normalize(x, this->running_mean_, this->running_var_, false);
        }
        Tensor<T> out = this->frozen_normalize(x, this->running_mean_, this->running_var_, true);
        std::vector<double> mean, var;
        batch_mean_var(x, mean, var);
        this->ema_into_running(mean, var);
        return out;
    }

    Tensor<T> backward(const Tensor<T>& g) override { return this->frozen_backward(g); }

    std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<FbnNorm>(*this); }
    const char* kind() const override { return "fbn"; }
};

// Group normalization over (C/G, H, W) per sample. LayerNorm is the
// single-group special case.
template <class T>
class GroupNorm : public NormLayer<T> {
public:
    GroupNorm(std::size_t channels, std::size_t groups, double eps = 1e-5)
        : NormLayer<T>(channels, eps), groups_(groups) {
        if (groups == 0) throw ConfigError("gn: groups must be >= 1");
        if (channels % groups != 0)
            throw ConfigError("gn: channel count " + std::to_string(channels) +
                              " not divisible by group count " + std::to_string(groups));
    }

    NormKind norm_kind() const override { return NormKind::Gn; }
    std::size_t groups() const { return groups_; }

    Tensor<T> forward(const Tensor<T>& x, NormMode mode) override {
        const auto lay = channel_layout(x);
        this->check_channels(lay);
        if (mode == NormMode::CollectStats) this->record_input(x);
        const std::size_t C = this->channels_;
        const std::size_t cpg = C / groups_;
        const std::size_t gsize = cpg * lay.spatial;
        Tensor<T> out(x.shape);
        Tensor<T> xhat(x.shape);
        std::vector<double> inv(lay.n * groups_);
        for (std::size_t i = 0; i < lay.n; ++i) {
            for (std::size_t gi = 0; gi < groups_; ++gi) {
                const T* base = x.data.data() + (i * C + gi * cpg) * lay.spatial;
                double s = 0.0, s2 = 0.0;
                for (std::size_t k = 0; k < gsize; ++k) {
                    const double v = double(base[k]);
                    s += v;
                    s2 += v * v;
                }
                const double mean = s / double(gsize);
                double var = s2 / double(gsize) - mean * mean;
                if (var < 0.0) var = 0.0;
                const double iv = 1.0 / std::sqrt(var + this->eps_);
                inv[i * groups_ + gi] = iv;
                T* po = out.data.data() + (i * C + gi * cpg) * lay.spatial;
                T* ph = xhat.data.data() + (i * C + gi * cpg) * lay.spatial;
                for (std::size_t cc = 0; cc < cpg; ++cc) {
                    const std::size_t c = gi * cpg + cc;
                    const double gam = double(this->gamma_.data[c]);
                    const double bet = double(this->beta_.data[c]);
                    for (std::size_t k = 0; k < lay.spatial; ++k) {
                        const double hv = (double(base[cc * lay.spatial + k]) - mean) * iv;
                        ph[cc * lay.spatial + k] = T(hv);
                        po[cc * lay.spatial + k] = T(gam * hv + bet);
                    }
                }
            }
        }
        if (mode == NormMode::Train) {
            xhat_ = std::move(xhat);
            inv_ = std::move(inv);
            have_cache_ = true;
        }
        return out;
    }

    Tensor<T> backward(const Tensor<T>& g) override {
        this->require_cache(have_cache_, "gn");
        const auto lay = channel_layout(g);
        this->check_channels(lay);
        const std::size_t C = this->channels_;
        const std::size_t cpg = C / groups_;
        const double m = double(cpg * lay.spatial);
        Tensor<T> dx(g.shape);
        std::vector<double> dgamma(C, 0.0), dbeta(C, 0.0);
        for (std::size_t i = 0; i < lay.n; ++i) {
            for (std::size_t gi = 0; gi < groups_; ++gi) {
                // group sums of ghat = g*gamma and ghat*xhat
                double sg = 0.0, sgx = 0.0;
                for (std::size_t cc = 0; cc < cpg; ++cc) {
                    const std::size_t c = gi * cpg + cc;
                    const T* pg = g.data.data() + (i * C + c) * lay.spatial;
                    const T* ph = xhat_.data.data() + (i * C + c) * lay.spatial;
                    const double gam = double(this->gamma_.data[c]);
                    for (std::size_t k = 0; k < lay.spatial; ++k) {
                        const double gv = double(pg[k]);
                        const double hv = double(ph[k]);
                        dgamma[c] += gv * hv;
                        dbeta[c] += gv;
                        sg += gam * gv;
                        sgx += gam * gv * hv;
                    }
                }
                const double iv = inv_[i * groups_ + gi];
                const double t1 = sg / m;
                const double t2 = sgx / m;
                for (std::size_t cc = 0; cc < cpg; ++cc) {
                    const std::size_t c = gi * cpg + cc;
                    const T* pg = g.data.data() + (i * C + c) * lay.spatial;
                    const T* ph = xhat_.data.data() + (i * C + c) * lay.spatial;
                    T* pd = dx.data.data() + (i * C + c) * lay.spatial;
                    const double gam = double(this->gamma_.data[c]);
                    for (std::size_t k = 0; k < lay.spatial; ++k)
                        pd[k] = T(iv * (gam * double(pg[k]) - t1 - t2 * double(ph[k])));
                }
            }
        }
        for (std::size_t c = 0; c < C; ++c) {
            this->gamma_grad_.data[c] = T(dgamma[c]);
            this->beta_grad_.data[c] = T(dbeta[c]);
        }
        return dx;
    }

    std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<GroupNorm>(*this); }
    const char* kind() const override { return "gn"; }

protected:
    std::size_t groups_;
    Tensor<T> xhat_;
    std::vector<double> inv_;
    bool have_cache_ = false;
};

// Layer normalization: per-sample statistics over all channels and spatial
// positions, i.e. group normalization with a single group.
template <class T>
class LayerNorm final : public GroupNorm<T> {
public:
    explicit LayerNorm(std::size_t channels, double eps = 1e-5)
        : GroupNorm<T>(channels, 1, eps) {}

    NormKind norm_kind() const override { return NormKind::Ln; }
    std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<LayerNorm>(*this); }
    const char* kind() const override { return "ln"; }
};

}  // namespace fedhbn
