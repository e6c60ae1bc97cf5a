#pragma once

#include <array>
#include <cmath>
#include <random>
#include <span>
#include <vector>

#include "fedhbn/rng.hpp"
#include "fedhbn/tensor.hpp"

namespace fedhbn {

template <class T = float>
struct Dataset {
    Tensor<T> images;  // (N, C, H, W) or (N, F)
    std::vector<int> labels;
    std::size_t num_classes = 0;

    std::size_t size() const { return labels.size(); }

    std::size_t sample_width() const { return images.size() / std::max<std::size_t>(1, size()); }

    // Gather a subset by index, preserving order.
    Dataset subset(std::span<const int> idx) const {
        Dataset out;
        out.num_classes = num_classes;
        std::vector<std::size_t> shape = images.shape;
        shape[0] = idx.size();
        out.images = Tensor<T>(shape);
        const std::size_t w = sample_width();
        out.labels.reserve(idx.size());
        for (std::size_t i = 0; i < idx.size(); ++i) {
            const std::size_t s = std::size_t(idx[i]);
            std::copy_n(images.data.data() + s * w, w, out.images.data.data() + i * w);
            out.labels.push_back(labels[s]);
        }
        return out;
    }

    Tensor<T> gather_images(std::span<const int> idx) const {
        std::vector<std::size_t> shape = images.shape;
        shape[0] = idx.size();
        Tensor<T> out(shape);
        const std::size_t w = sample_width();
        for (std::size_t i = 0; i < idx.size(); ++i)
            std::copy_n(images.data.data() + std::size_t(idx[i]) * w, w,
                        out.data.data() + i * w);
        return out;
    }

    std::vector<int> gather_labels(std::span<const int> idx) const {
        std::vector<int> out;
        out.reserve(idx.size());
        for (int i : idx) out.push_back(labels[std::size_t(i)]);
        return out;
    }
};

// Gaussian class blobs with flat features. Class means sit on a sphere of
// radius `separation`; unit-variance noise around them.
template <class T = float>
Dataset<T> synth_classification(std::size_t classes, std::size_t dims, std::size_t n,
                                double separation, std::uint64_t seed) {
    if (separation < 0.0) throw ConfigError("synth_classification: separation must be >= 0");
    auto rng = make_rng(derive_seed(seed, "synth_flat"));
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<std::vector<double>> means(classes, std::vector<double>(dims));
    for (auto& m : means) {
        double norm = 0.0;
        for (auto& v : m) {
            v = normal(rng);
            norm += v * v;
        }
        norm = std::sqrt(std::max(norm, 1e-12));
        for (auto& v : m) v = v / norm * separation;
    }
    Dataset<T> ds;
    ds.num_classes = classes;
    ds.images = Tensor<T>({n, dims});
    ds.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t c = i % classes;
        ds.labels[i] = int(c);
        for (std::size_t d = 0; d < dims; ++d)
            ds.images.at2(i, d) = T(means[c][d] + normal(rng));
    }
    return ds;
}

// Procedural low-resolution images for the conv path: each class has a
// blurred random template, samples are template*separation + unit noise.
template <class T = float>
Dataset<T> synth_conv_classification(std::size_t classes, std::size_t image_hw, std::size_t n,
                                     double separation, std::uint64_t seed,
                                     std::size_t channels = 3) {
    if (separation < 0.0) throw ConfigError("synth_conv_classification: separation must be >= 0");
    auto rng = make_rng(derive_seed(seed, "synth_conv"));
    std::normal_distribution<double> normal(0.0, 1.0);
    const std::size_t hw = image_hw;
    const std::size_t plane = hw * hw;
    const std::size_t width = channels * plane;

    std::vector<std::vector<double>> templates(classes, std::vector<double>(width));
    std::vector<double> raw(width);
    for (auto& t : templates) {
        for (auto& v : raw) v = normal(rng);
        // 3x3 box blur per channel gives the templates spatial structure
        for (std::size_t c = 0; c < channels; ++c) {
            for (std::size_t y = 0; y < hw; ++y) {
                for (std::size_t x = 0; x < hw; ++x) {
                    double s = 0.0;
                    int cnt = 0;
                    for (int dy = -1; dy <= 1; ++dy) {
                        for (int dx = -1; dx <= 1; ++dx) {
                            const int yy = int(y) + dy, xx = int(x) + dx;
                            if (yy < 0 || xx < 0 || yy >= int(hw) || xx >= int(hw)) continue;
                            s += raw[c * plane + std::size_t(yy) * hw + std::size_t(xx)];
                            ++cnt;
                        }
                    }
                    t[c * plane + y * hw + x] = s / double(cnt);
                }
            }
        }
    }
    Dataset<T> ds;
    ds.num_classes = classes;
    ds.images = Tensor<T>({n, channels, hw, hw});
    ds.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t c = i % classes;
        ds.labels[i] = int(c);
        T* px = ds.images.data.data() + i * width;
        for (std::size_t j = 0; j < width; ++j)
            px[j] = T(separation * templates[c][j] + normal(rng));
    }
    return ds;
}

// --- two-cluster toy (activation-space demonstration) ---

struct Cov2 {
    double a11, a12, a22;  // symmetric PSD
};

struct ToyCluster {
    std::vector<std::array<double, 2>> points;
};

inline ToyCluster sample_gaussian_cluster(std::size_t n, std::array<double, 2> mean, Cov2 cov,
                                          std::mt19937_64& rng) {
    if (cov.a11 < 0.0 || cov.a22 < 0.0 || cov.a11 * cov.a22 - cov.a12 * cov.a12 < -1e-12)
        throw ConfigError("toy cluster: covariance must be positive semi-definite");
    // 2x2 Cholesky, tolerant of the semi-definite boundary
    const double l11 = std::sqrt(std::max(cov.a11, 0.0));
    const double l21 = l11 > 0.0 ? cov.a12 / l11 : 0.0;
    const double l22 = std::sqrt(std::max(cov.a22 - l21 * l21, 0.0));
    std::normal_distribution<double> normal(0.0, 1.0);
    ToyCluster out;
    out.points.resize(n);
    for (auto& p : out.points) {
        const double z1 = normal(rng), z2 = normal(rng);
        p[0] = mean[0] + l11 * z1;
        p[1] = mean[1] + l21 * z1 + l22 * z2;
    }
    return out;
}

// Two Gaussian clusters simulating the activations of two clients.
inline std::pair<ToyCluster, ToyCluster> make_two_cluster_toy(std::size_t n_per_cluster,
                                                              std::array<double, 2> mean_a,
                                                              Cov2 cov_a,
                                                              std::array<double, 2> mean_b,
                                                              Cov2 cov_b, std::uint64_t seed) {
    auto rng = make_rng(derive_seed(seed, "toy"));
    ToyCluster a = sample_gaussian_cluster(n_per_cluster, mean_a, cov_a, rng);
    ToyCluster b = sample_gaussian_cluster(n_per_cluster, mean_b, cov_b, rng);
    return {std::move(a), std::move(b)};
}

}  // namespace fedhbn
