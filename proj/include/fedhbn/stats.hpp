#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "fedhbn/errors.hpp"
#include "fedhbn/tensor.hpp"

namespace fedhbn {

// Per-channel sufficient statistics: element count plus 64-bit sums.
// Merging two ChannelStats is exact in this representation, which is what
// makes pooled statistics reconstructible from per-client pieces.
struct ChannelStats {
    std::int64_t count = 0;        // elements per channel (N*H*W at that layer)
    std::vector<double> sum;       // per channel
    std::vector<double> sumsq;     // per channel

    ChannelStats() = default;
    explicit ChannelStats(std::size_t channels) : sum(channels, 0.0), sumsq(channels, 0.0) {}

    std::size_t channels() const { return sum.size(); }

    void merge(const ChannelStats& o) {
        if (sum.empty()) {
            *this = o;
            return;
        }
        if (o.sum.empty()) return;
        if (o.channels() != channels())
            throw DataError("ChannelStats merge: channel count mismatch");
        count += o.count;
        for (std::size_t c = 0; c < sum.size(); ++c) {
            sum[c] += o.sum[c];
            sumsq[c] += o.sumsq[c];
        }
    }

    double mean(std::size_t c) const { return count > 0 ? sum[c] / double(count) : 0.0; }

    // Population variance (denominator = count), clamped at 0 to absorb roundoff.
    double var_pop(std::size_t c) const {
        if (count <= 0) return 0.0;
        const double m = mean(c);
        const double v = sumsq[c] / double(count) - m * m;
        return v > 0.0 ? v : 0.0;
    }

    // Sample variance (denominator = count-1), clamped at 0.
    double var_sample(std::size_t c) const {
        if (count < 2) throw DataError("ChannelStats: sample variance needs count >= 2");
        const double m = mean(c);
        const double v = (sumsq[c] - double(count) * m * m) / double(count - 1);
        return v > 0.0 ? v : 0.0;
    }

    std::vector<double> means() const {
        std::vector<double> m(channels());
        for (std::size_t c = 0; c < channels(); ++c) m[c] = mean(c);
        return m;
    }
    std::vector<double> vars_pop() const {
        std::vector<double> v(channels());
        for (std::size_t c = 0; c < channels(); ++c) v[c] = var_pop(c);
        return v;
    }
    std::vector<double> vars_sample() const {
        std::vector<double> v(channels());
        for (std::size_t c = 0; c < channels(); ++c) v[c] = var_sample(c);
        return v;
    }

    bool operator==(const ChannelStats& o) const {
        return count == o.count && sum == o.sum && sumsq == o.sumsq;
    }
};

// Accumulate per-channel sums of a batch into `acc`. Channel axis is dim 1
// for NCHW tensors; for (N, F) activations every feature is a channel.
template <class T>
void accumulate_channel_stats(const Tensor<T>& x, ChannelStats& acc) {
    if (x.ndim() != 4 && x.ndim() != 2)
        throw DataError("channel stats expect NCHW or (N,F) input");
    const std::size_t n = x.dim(0);
    const std::size_t c = x.dim(1);
    const std::size_t spatial = x.size() / (n * c);
    if (acc.sum.empty()) acc = ChannelStats(c);
    if (acc.channels() != c) throw DataError("channel stats: channel count mismatch");
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t ch = 0; ch < c; ++ch) {
            const T* p = x.data.data() + (i * c + ch) * spatial;
            double s = 0.0, s2 = 0.0;
            for (std::size_t k = 0; k < spatial; ++k) {
                const double v = double(p[k]);
                s += v;
                s2 += v * v;
            }
            acc.sum[ch] += s;
            acc.sumsq[ch] += s2;
        }
    }
    acc.count += std::int64_t(n * spatial);
}

// Per-channel mean and population variance over the N,H,W axes.
template <class T>
ChannelStats compute_batch_stats(const Tensor<T>& x) {
    if (x.size() == 0) throw DataError("compute_batch_stats: empty batch");
    ChannelStats s;
    accumulate_channel_stats(x, s);
    return s;
}

// Sigmoid mixing weights: batch weight s(-a) = e^{-a}/(1+e^{-a}),
// global weight s(a) = 1/(1+e^{-a}). They sum to 1 for every finite a.
inline double sigmoid(double a) {
    if (a >= 0.0) {
        const double e = std::exp(-a);
        return 1.0 / (1.0 + e);
    }
    const double e = std::exp(a);
    return e / (1.0 + e);
}

struct MixWeights {
    double batch;   // weight on current-batch statistics
    double global;  // weight on stored global statistics
};

inline MixWeights hybrid_weights(double alpha) {
    const double wg = sigmoid(alpha);
    return MixWeights{1.0 - wg, wg};
}

// Convex blend of batch and global statistics per channel.
inline void hybrid_mix(const std::vector<double>& alpha, const std::vector<double>& batch_mean,
                       const std::vector<double>& batch_var, const std::vector<double>& global_mean,
                       const std::vector<double>& global_var, std::vector<double>& mixed_mean,
                       std::vector<double>& mixed_var) {
    const std::size_t c = alpha.size();
    if (batch_mean.size() != c || global_mean.size() != c || batch_var.size() != c ||
        global_var.size() != c)
        throw DataError("hybrid_mix: channel count mismatch");
    mixed_mean.resize(c);
    mixed_var.resize(c);
    for (std::size_t i = 0; i < c; ++i) {
        const MixWeights w = hybrid_weights(alpha[i]);
        mixed_mean[i] = w.batch * batch_mean[i] + w.global * global_mean[i];
        mixed_var[i] = w.batch * batch_var[i] + w.global * global_var[i];
    }
}

// Moving-average blend of statistic vectors, new-value weight lambda.
inline std::vector<double> ema_update(const std::vector<double>& old_v,
                                      const std::vector<double>& new_v, double lambda) {
    if (!(lambda > 0.0) || lambda > 1.0)
        throw ConfigError("ema_update: lambda must be in (0, 1]");
    if (old_v.size() != new_v.size()) throw DataError("ema_update: size mismatch");
    std::vector<double> out(old_v.size());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = (1.0 - lambda) * old_v[i] + lambda * new_v[i];
    return out;
}

}  // namespace fedhbn
