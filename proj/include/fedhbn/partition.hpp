#pragma once

#include <algorithm>
#include <numeric>
#include <random>
#include <vector>

#include "fedhbn/errors.hpp"
#include "fedhbn/rng.hpp"

namespace fedhbn {

struct PartitionSpec {
    std::size_t clients = 10;
    double phi = 0.6;           // Dirichlet coefficient; smaller = more skew
    std::uint64_t seed = 0;
    std::size_t min_samples = 1;
    int max_attempts = 100;
};

// Per-class Dirichlet split: for every class, draw proportions over the
// clients from Dir(phi * 1_K) and cut that class's index list accordingly.
// The result is a disjoint cover of [0, labels.size()).
inline std::vector<std::vector<int>> dirichlet_partition(const std::vector<int>& labels,
                                                         std::size_t num_classes,
                                                         const PartitionSpec& spec) {
    if (spec.phi <= 0.0) throw ConfigError("dirichlet_partition: phi must be > 0");
    if (spec.clients == 0) throw ConfigError("dirichlet_partition: need at least one client");
    if (labels.size() < spec.clients * spec.min_samples)
        throw DataError("dirichlet_partition: dataset too small for requested min samples");

    std::vector<std::vector<int>> by_class(num_classes);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const int y = labels[i];
        if (y < 0 || std::size_t(y) >= num_classes)
            throw DataError("dirichlet_partition: label out of range");
        by_class[std::size_t(y)].push_back(int(i));
    }

    for (int attempt = 0; attempt < spec.max_attempts; ++attempt) {
        auto rng = make_rng(derive_seed(spec.seed, "dirichlet", std::uint64_t(attempt)));
        std::gamma_distribution<double> gamma(spec.phi, 1.0);
        std::vector<std::vector<int>> parts(spec.clients);

        for (std::size_t c = 0; c < num_classes; ++c) {
            std::vector<int> idx = by_class[c];
            std::shuffle(idx.begin(), idx.end(), rng);
            std::vector<double> p(spec.clients);
            double total = 0.0;
            for (auto& v : p) {
                v = gamma(rng);
                total += v;
            }
            if (total <= 0.0) {
                std::fill(p.begin(), p.end(), 1.0);
                total = double(spec.clients);
            }
            // largest-remainder rounding of p * n_c into integer counts
            const std::size_t n_c = idx.size();
            std::vector<std::size_t> counts(spec.clients, 0);
            std::vector<std::pair<double, std::size_t>> remainders;
            std::size_t assigned = 0;
            for (std::size_t k = 0; k < spec.clients; ++k) {
                const double target = p[k] / total * double(n_c);
                counts[k] = std::size_t(target);
                assigned += counts[k];
                remainders.push_back({target - double(counts[k]), k});
            }
            std::sort(remainders.begin(), remainders.end(), [](const auto& a, const auto& b) {
                if (a.first != b.first) return a.first > b.first;
                return a.second < b.second;
            });
            for (std::size_t r = 0; assigned < n_c; ++r, ++assigned)
                counts[remainders[r % remainders.size()].second]++;

            std::size_t pos = 0;
            for (std::size_t k = 0; k < spec.clients; ++k) {
                for (std::size_t j = 0; j < counts[k]; ++j) parts[k].push_back(idx[pos++]);
            }
        }

        bool ok = true;
        for (const auto& part : parts)
            if (part.size() < spec.min_samples) ok = false;
        if (ok) {
            for (auto& part : parts) std::sort(part.begin(), part.end());
            return parts;
        }
    }
    throw DataError("dirichlet_partition: could not satisfy min samples per client after " +
                    std::to_string(spec.max_attempts) + " attempts");
}

}  // namespace fedhbn
