#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <span>
#include <thread>
#include <utility>
#include <vector>

#include "fedhbn/checkpoint.hpp"
#include "fedhbn/data.hpp"
#include "fedhbn/loss.hpp"
#include "fedhbn/model.hpp"
#include "fedhbn/optim.hpp"
#include "fedhbn/rng.hpp"
#include "fedhbn/stats.hpp"

namespace fedhbn {

// Orchestration mode. Hbn runs the separated statistics/weights protocol;
// NaiveBn is plain FedAvg over vanilla BN (the biased baseline); the rest
// aggregate weights only, averaging whatever running buffers exist.
enum class FedMode { Hbn, NaiveBn, Gn, Ln, FixBn, Fbn };

inline const char* fed_mode_name(FedMode m) {
    switch (m) {
        case FedMode::Hbn: return "hbn";
        case FedMode::NaiveBn: return "naive_bn";
        case FedMode::Gn: return "gn";
        case FedMode::Ln: return "ln";
        case FedMode::FixBn: return "fixbn";
        case FedMode::Fbn: return "fbn";
    }
    return "?";
}

inline FedMode parse_fed_mode(const std::string& s) {
    if (s == "hbn") return FedMode::Hbn;
    if (s == "naive_bn" || s == "bn") return FedMode::NaiveBn;
    if (s == "gn") return FedMode::Gn;
    if (s == "ln") return FedMode::Ln;
    if (s == "fixbn") return FedMode::FixBn;
    if (s == "fbn") return FedMode::Fbn;
    throw ConfigError("unknown federation mode '" + s + "'");
}

inline NormKind norm_kind_for(FedMode m) {
    switch (m) {
        case FedMode::Hbn: return NormKind::Hbn;
        case FedMode::NaiveBn: return NormKind::Bn;
        case FedMode::Gn: return NormKind::Gn;
        case FedMode::Ln: return NormKind::Ln;
        case FedMode::FixBn: return NormKind::FixBn;
        case FedMode::Fbn: return NormKind::Fbn;
    }
    return NormKind::None;
}

// Per-norm-layer global statistics in value form: mean and the Eq.-style
// pooled sample variance, plus the element count behind them.
struct GlobalStats {
    std::int64_t count = 0;
    std::vector<double> mean, var;
};

template <class T = float>
struct GlobalModel {
    Model<T> model;     // holds the global weights and installed statistics
    int round = 0;
    bool stats_ready = false;
};

template <class T>
void install_global_stats(Model<T>& model, const std::vector<GlobalStats>& stats) {
    auto norms = model.norm_layers();
    std::size_t i = 0;
    for (auto* n : norms) {
        if (auto* h = n->as_hbn()) {
            if (i >= stats.size()) throw ProtocolError("install_global_stats: missing layer stats");
            h->set_global_stats(stats[i].mean, stats[i].var, stats[i].count);
            ++i;
        }
    }
    if (i != stats.size()) throw ProtocolError("install_global_stats: extra layer stats");
}

template <class T>
std::vector<GlobalStats> extract_global_stats(Model<T>& model) {
    std::vector<GlobalStats> out;
    for (auto* n : model.norm_layers()) {
        if (auto* h = n->as_hbn())
            out.push_back(GlobalStats{h->global_count(), h->global_mean(), h->global_var()});
    }
    return out;
}

template <class T = float>
struct ClientRecord {
    int id = 0;
    Dataset<T> data;
    // Persistent per-layer hybrid factors; stay on the client across rounds
    // and never enter any update or checkpoint.
    std::vector<Tensor<T>> alphas;
    // Local optimizer state; velocities are reset at the start of each round.
    SgdMomentum<T> optim{0.0, 0.0};

    std::int64_t samples() const { return std::int64_t(data.size()); }
};

struct RoundPlan {
    int round = 0;
    std::vector<int> participants;  // ascending client ids
    std::vector<double> weights;    // N_k / N over the participants
};

// Uniform sampling without replacement of ceil(C*K) participants, reseeded
// per round from the master seed.
template <class T>
RoundPlan make_round_plan(int round, const std::vector<ClientRecord<T>>& clients,
                          double participation, std::uint64_t master_seed) {
    if (!(participation > 0.0) || participation > 1.0)
        throw ConfigError("participation rate must be in (0, 1]");
    const std::size_t k = clients.size();
    const std::size_t take = std::size_t(std::ceil(participation * double(k)));
    if (take == 0 || take > k) throw ConfigError("round plan: invalid participant count");

    std::vector<int> ids(k);
    std::iota(ids.begin(), ids.end(), 0);
    if (take < k) {
        auto rng = make_rng(derive_seed(master_seed, "participants", std::uint64_t(round)));
        for (std::size_t i = 0; i < take; ++i) {
            std::uniform_int_distribution<std::size_t> pick(i, k - 1);
            std::swap(ids[i], ids[pick(rng)]);
        }
        ids.resize(take);
    }
    std::sort(ids.begin(), ids.end());

    RoundPlan plan;
    plan.round = round;
    plan.participants = std::move(ids);
    double total = 0.0;
    for (int id : plan.participants) total += double(clients[std::size_t(id)].samples());
    if (total <= 0.0) throw DataError("round plan: participants hold no data");
    for (int id : plan.participants)
        plan.weights.push_back(double(clients[std::size_t(id)].samples()) / total);
    return plan;
}

template <class T = float>
struct ClientUpdate {
    int id = 0;
    ModelParams<T> weights;
    std::vector<ChannelStats> stats;  // per norm layer, separated-collection path
    // Running-buffer values for the naive modes (mean, variance per layer).
    std::vector<std::pair<std::vector<double>, std::vector<double>>> running;
    std::int64_t samples = 0;
    bool stats_subsampled = false;
    double train_loss = 0.0;
};

// One gradient-free sweep over the client's data in CollectStats mode under
// the downloaded global model. Pure function of the global state and the
// data; the global model is untouched.
template <class T>
std::vector<ChannelStats> client_collect_stats(const GlobalModel<T>& global,
                                               const Dataset<T>& data, std::size_t sample_cap = 0,
                                               std::uint64_t cap_seed = 0,
                                               bool* subsampled = nullptr) {
    if (data.size() == 0) throw DataError("client_collect_stats: empty client dataset");
    Model<T> model = global.model;  // deep copy
    for (auto* n : model.norm_layers()) n->reset_collected_stats();

    std::vector<int> idx(data.size());
    std::iota(idx.begin(), idx.end(), 0);
    if (sample_cap > 0 && data.size() > sample_cap) {
        auto rng = make_rng(cap_seed);
        std::shuffle(idx.begin(), idx.end(), rng);
        idx.resize(sample_cap);
        std::sort(idx.begin(), idx.end());
        if (subsampled) *subsampled = true;
    } else if (subsampled) {
        *subsampled = false;
    }

    const std::size_t chunk = 64;
    for (std::size_t start = 0; start < idx.size(); start += chunk) {
        const std::size_t len = std::min(chunk, idx.size() - start);
        std::span<const int> part(idx.data() + start, len);
        Tensor<T> batch = data.gather_images(part);
        model.forward(batch, NormMode::CollectStats);
    }

    std::vector<ChannelStats> out;
    for (auto* n : model.norm_layers()) out.push_back(n->collected_stats());
    return out;
}

struct LocalTrainConfig {
    int epochs = 1;
    std::size_t batch = 4;
    double lr = 0.01;
    double momentum = 0.9;
    std::uint64_t master_seed = 0;
};

// E epochs of mini-batch SGD from the downloaded weights. Updates the
// shared parameters and the client-local alpha; global statistics inside
// HBN layers stay frozen. Returns the new weights; the separately collected
// statistics are attached by the round driver.
template <class T>
ClientUpdate<T> client_local_train(const GlobalModel<T>& global, ClientRecord<T>& client,
                                   const LocalTrainConfig& cfg, int round) {
    Model<T> model = global.model;  // local replica of the global weights
    model.set_round(round);

    // restore this client's persistent hybrid factors
    auto norms = model.norm_layers();
    std::vector<HbnNorm<T>*> hbns;
    for (auto* n : norms)
        if (auto* h = n->as_hbn()) hbns.push_back(h);
    if (!client.alphas.empty()) {
        if (client.alphas.size() != hbns.size())
            throw StateError("client alphas do not match model layout");
        for (std::size_t i = 0; i < hbns.size(); ++i) hbns[i]->alpha() = client.alphas[i];
    }

    client.optim = SgdMomentum<T>(cfg.lr, cfg.momentum);
    auto params = model.trainable_params();

    const std::size_t n = client.data.size();
    if (n == 0) throw DataError("client_local_train: empty client dataset");
    std::size_t batch = cfg.batch;
    if (batch > n) {
        std::fprintf(stderr, "warning: client %d has %zu samples < batch size %zu, using one full batch\n",
                     client.id, n, batch);
        batch = n;
    }

    double loss_sum = 0.0;
    std::size_t loss_count = 0;
    for (int e = 0; e < cfg.epochs; ++e) {
        std::vector<int> order(n);
        std::iota(order.begin(), order.end(), 0);
        auto rng = make_rng(derive_seed(cfg.master_seed, "shuffle",
                                        (std::uint64_t(round) << 32) | std::uint64_t(client.id),
                                        std::uint64_t(e)));
        std::shuffle(order.begin(), order.end(), rng);

        std::size_t start = 0;
        while (start < n) {
            std::size_t len = std::min(batch, n - start);
            // absorb a trailing singleton into this batch (plain BN rejects
            // batch size 1 in Train mode)
            if (batch > 1 && n - start - len == 1) len += 1;
            std::span<const int> part(order.data() + start, len);
            Tensor<T> images = client.data.gather_images(part);
            std::vector<int> labels = client.data.gather_labels(part);
            Tensor<T> logits = model.forward(images, NormMode::Train);
            auto res = softmax_cross_entropy(logits, std::span<const int>(labels));
            model.backward(res.logit_grads);
            client.optim.step(params);
            loss_sum += res.loss * double(len);
            loss_count += len;
            start += len;
        }
    }

    // persist alpha for the next round
    client.alphas.clear();
    for (auto* h : hbns) client.alphas.push_back(h->alpha());

    ClientUpdate<T> update;
    update.id = client.id;
    update.weights = model.extract_shared();
    update.samples = client.samples();
    update.train_loss = loss_count > 0 ? loss_sum / double(loss_count) : 0.0;
    for (auto* nl : norms) {
        if (auto* r = nl->as_running())
            update.running.push_back({r->running_mean(), r->running_var()});
    }
    return update;
}

template <class T>
void check_plan_updates(const std::vector<ClientUpdate<T>>& updates, const RoundPlan& plan) {
    if (updates.size() != plan.participants.size())
        throw ProtocolError("aggregation: update count does not match the round plan");
    double wsum = 0.0;
    for (double w : plan.weights) wsum += w;
    if (std::fabs(wsum - 1.0) > 1e-9)
        throw ProtocolError("aggregation: plan weights do not sum to 1");
    for (std::size_t i = 0; i < updates.size(); ++i)
        if (updates[i].id != plan.participants[i])
            throw ProtocolError("aggregation: missing or misordered participant update");
}

// Weighted average of the shared parameters, 64-bit accumulation, summed in
// ascending client-id order.
template <class T>
ModelParams<T> aggregate_weights(std::vector<ClientUpdate<T>> updates, const RoundPlan& plan) {
    std::sort(updates.begin(), updates.end(),
              [](const auto& a, const auto& b) { return a.id < b.id; });
    check_plan_updates(updates, plan);

    const ModelParams<T>& first = updates.front().weights;
    ModelParams<T> out;
    out.names = first.names;
    out.values.reserve(first.size());
    std::vector<std::vector<double>> acc(first.size());
    for (std::size_t p = 0; p < first.size(); ++p)
        acc[p].assign(first.values[p].size(), 0.0);

    for (std::size_t u = 0; u < updates.size(); ++u) {
        const double w = plan.weights[u];
        const ModelParams<T>& mp = updates[u].weights;
        if (mp.size() != first.size()) throw ProtocolError("aggregation: parameter count mismatch");
        for (std::size_t p = 0; p < mp.size(); ++p) {
            if (mp.names[p] != first.names[p])
                throw ProtocolError("aggregation: parameter name mismatch at slot " +
                                    std::to_string(p));
            const auto& v = mp.values[p].data;
            auto& a = acc[p];
            if (v.size() != a.size()) throw ProtocolError("aggregation: parameter shape mismatch");
            for (std::size_t j = 0; j < v.size(); ++j) a[j] += w * double(v[j]);
        }
    }
    for (std::size_t p = 0; p < first.size(); ++p) {
        Tensor<T> t(first.values[p].shape);
        for (std::size_t j = 0; j < t.size(); ++j) t.data[j] = T(acc[p][j]);
        out.values.push_back(std::move(t));
    }
    return out;
}

// Unbiased pooled statistics: mean is the count-weighted client mean, the
// variance adds the between-client spread and divides by (count - 1), so
// the result equals the sample variance of the pooled activations.
template <class T>
std::vector<GlobalStats> aggregate_stats_unbiased(std::vector<ClientUpdate<T>> updates,
                                                  const RoundPlan& plan) {
    std::sort(updates.begin(), updates.end(),
              [](const auto& a, const auto& b) { return a.id < b.id; });
    check_plan_updates(updates, plan);
    const std::size_t layers = updates.front().stats.size();
    for (const auto& u : updates)
        if (u.stats.size() != layers) throw ProtocolError("stats aggregation: layer count mismatch");

    std::vector<GlobalStats> out(layers);
    for (std::size_t l = 0; l < layers; ++l) {
        const std::size_t channels = updates.front().stats[l].channels();
        std::int64_t total = 0;
        for (const auto& u : updates) {
            if (u.stats[l].channels() != channels)
                throw ProtocolError("stats aggregation: channel count mismatch");
            total += u.stats[l].count;
        }
        if (total < 2)
            throw DataError("stats aggregation: degenerate variance, pooled element count < 2");
        GlobalStats gs;
        gs.count = total;
        gs.mean.assign(channels, 0.0);
        gs.var.assign(channels, 0.0);
        for (const auto& u : updates) {
            const double w = double(u.stats[l].count) / double(total);
            for (std::size_t c = 0; c < channels; ++c) gs.mean[c] += w * u.stats[l].mean(c);
        }
        for (const auto& u : updates) {
            const double nk = double(u.stats[l].count);
            for (std::size_t c = 0; c < channels; ++c) {
                const double dm = u.stats[l].mean(c) - gs.mean[c];
                gs.var[c] += nk * (u.stats[l].var_pop(c) + dm * dm) / double(total - 1);
            }
        }
        for (auto& v : gs.var)
            if (v < 0.0) v = 0.0;
        out[l] = std::move(gs);
    }
    return out;
}

// Straggler smoothing: convex blend of previous and newly aggregated global
// statistics. With no previous statistics the new values are adopted as-is.
inline std::vector<GlobalStats> server_ema(const std::vector<GlobalStats>& prev,
                                           const std::vector<GlobalStats>& fresh, double lambda,
                                           bool have_prev) {
    if (!have_prev || prev.empty()) return fresh;
    if (prev.size() != fresh.size()) throw ProtocolError("server_ema: layer count mismatch");
    std::vector<GlobalStats> out(fresh.size());
    for (std::size_t l = 0; l < fresh.size(); ++l) {
        out[l].count = fresh[l].count;
        out[l].mean = ema_update(prev[l].mean, fresh[l].mean, lambda);
        out[l].var = ema_update(prev[l].var, fresh[l].var, lambda);
    }
    return out;
}

// Plain weighted average of running buffers (the biased baseline path).
template <class T>
std::vector<std::pair<std::vector<double>, std::vector<double>>> aggregate_running_naive(
    std::vector<ClientUpdate<T>> updates, const RoundPlan& plan) {
    std::sort(updates.begin(), updates.end(),
              [](const auto& a, const auto& b) { return a.id < b.id; });
    check_plan_updates(updates, plan);
    const std::size_t layers = updates.front().running.size();
    std::vector<std::pair<std::vector<double>, std::vector<double>>> out(layers);
    for (std::size_t l = 0; l < layers; ++l) {
        const std::size_t channels = updates.front().running[l].first.size();
        out[l].first.assign(channels, 0.0);
        out[l].second.assign(channels, 0.0);
        for (std::size_t u = 0; u < updates.size(); ++u) {
            const double w = plan.weights[u];
            const auto& rm = updates[u].running[l];
            for (std::size_t c = 0; c < channels; ++c) {
                out[l].first[c] += w * rm.first[c];
                out[l].second[c] += w * rm.second[c];
            }
        }
    }
    return out;
}

template <class T>
void install_running_stats(Model<T>& model,
                           const std::vector<std::pair<std::vector<double>, std::vector<double>>>&
                               buffers) {
    std::size_t i = 0;
    for (auto* n : model.norm_layers()) {
        if (auto* r = n->as_running()) {
            if (i >= buffers.size()) throw ProtocolError("install_running_stats: missing buffers");
            r->set_running_stats(buffers[i].first, buffers[i].second);
            ++i;
        }
    }
    if (i != buffers.size()) throw ProtocolError("install_running_stats: extra buffers");
}

struct RoundConfig {
    int epochs = 1;
    std::size_t batch = 4;
    double lr = 0.01;
    double momentum = 0.9;
    double lambda = 0.01;
    std::size_t stats_sample_cap = 0;
    std::uint64_t master_seed = 0;
    int threads = 1;
};

struct RoundOutcome {
    double train_loss = 0.0;  // sample-weighted mean of client losses
    bool any_stats_subsampled = false;
};

namespace detail {

// Runs fn(i) for i in [0, n) on up to `threads` workers. Results must be
// written to pre-sized slots; merge order stays deterministic.
inline void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
    if (threads <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    const std::size_t workers = std::min<std::size_t>(std::size_t(threads), n);
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w]() {
            try {
                for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

}  // namespace detail

// Statistics-only round: collect under the current global model, aggregate
// with the unbiased estimator, smooth with the server EMA, install. The
// global weights are untouched.
template <class T>
void run_stats_round(GlobalModel<T>& global, std::vector<ClientRecord<T>>& clients,
                     const RoundPlan& plan, const RoundConfig& cfg) {
    std::vector<ClientUpdate<T>> updates(plan.participants.size());
    detail::parallel_for(plan.participants.size(), cfg.threads, [&](std::size_t i) {
        const int id = plan.participants[i];
        ClientUpdate<T>& u = updates[i];
        u.id = id;
        u.samples = clients[std::size_t(id)].samples();
        u.stats = client_collect_stats(
            global, clients[std::size_t(id)].data, cfg.stats_sample_cap,
            derive_seed(cfg.master_seed, "statcap", std::uint64_t(plan.round), std::uint64_t(id)),
            &u.stats_subsampled);
    });
    auto fresh = aggregate_stats_unbiased(updates, plan);
    auto blended = server_ema(extract_global_stats(global.model), fresh, cfg.lambda,
                              global.stats_ready);
    install_global_stats(global.model, blended);
    global.stats_ready = true;
    global.round = plan.round;
}

// One communication round.
template <class T>
RoundOutcome run_round(GlobalModel<T>& global, std::vector<ClientRecord<T>>& clients,
                       const RoundPlan& plan, FedMode mode, const RoundConfig& cfg) {
    RoundOutcome outcome;
    std::vector<ClientUpdate<T>> updates(plan.participants.size());

    LocalTrainConfig tc;
    tc.epochs = cfg.epochs;
    tc.batch = cfg.batch;
    tc.lr = cfg.lr;
    tc.momentum = cfg.momentum;
    tc.master_seed = cfg.master_seed;

    detail::parallel_for(plan.participants.size(), cfg.threads, [&](std::size_t i) {
        const int id = plan.participants[i];
        ClientRecord<T>& client = clients[std::size_t(id)];
        std::vector<ChannelStats> stats;
        bool subsampled = false;
        if (mode == FedMode::Hbn) {
            // Eq.-separated order: statistics of the downloaded weights first
            stats = client_collect_stats(
                global, client.data, cfg.stats_sample_cap,
                derive_seed(cfg.master_seed, "statcap", std::uint64_t(plan.round),
                            std::uint64_t(id)),
                &subsampled);
        }
        updates[i] = client_local_train(global, client, tc, plan.round);
        updates[i].stats = std::move(stats);
        updates[i].stats_subsampled = subsampled;
    });

    double loss = 0.0;
    for (std::size_t i = 0; i < updates.size(); ++i) {
        loss += plan.weights[i] * updates[i].train_loss;
        outcome.any_stats_subsampled |= updates[i].stats_subsampled;
    }
    outcome.train_loss = loss;

    global.model.load_shared(aggregate_weights(updates, plan));
    if (mode == FedMode::Hbn) {
        auto fresh = aggregate_stats_unbiased(updates, plan);
        auto blended = server_ema(extract_global_stats(global.model), fresh, cfg.lambda,
                                  global.stats_ready);
        install_global_stats(global.model, blended);
        global.stats_ready = true;
    } else if (!updates.front().running.empty()) {
        install_running_stats(global.model, aggregate_running_naive(updates, plan));
    }
    global.round = plan.round;
    return outcome;
}

// Brute-force oracle: one CollectStats pass of the given model over the
// union of the shards, returning per-layer pooled sufficient statistics.
template <class T>
std::vector<ChannelStats> union_collect_stats(const GlobalModel<T>& global,
                                              const std::vector<const Dataset<T>*>& shards) {
    Model<T> model = global.model;
    for (auto* n : model.norm_layers()) n->reset_collected_stats();
    const std::size_t chunk = 64;
    for (const Dataset<T>* ds : shards) {
        std::vector<int> idx(ds->size());
        std::iota(idx.begin(), idx.end(), 0);
        for (std::size_t start = 0; start < idx.size(); start += chunk) {
            const std::size_t len = std::min(chunk, idx.size() - start);
            Tensor<T> batch = ds->gather_images(std::span<const int>(idx.data() + start, len));
            model.forward(batch, NormMode::CollectStats);
        }
    }
    std::vector<ChannelStats> out;
    for (auto* n : model.norm_layers()) out.push_back(n->collected_stats());
    return out;
}

// Mean over layers of the normalized L2 deviation between the model's
// installed normalization statistics and the pooled oracle statistics.
template <class T>
double stats_gap_vs_oracle(GlobalModel<T>& global, const std::vector<const Dataset<T>*>& shards) {
    auto oracle = union_collect_stats(global, shards);
    std::vector<std::pair<std::vector<double>, std::vector<double>>> installed;
    for (auto* n : global.model.norm_layers()) {
        if (auto* h = n->as_hbn())
            installed.push_back({h->global_mean(), h->global_var()});
        else if (auto* r = n->as_running())
            installed.push_back({r->running_mean(), r->running_var()});
    }
    if (installed.size() != oracle.size())
        throw StateError("stats_gap_vs_oracle: stats-bearing layer mismatch");
    if (installed.empty()) return 0.0;

    auto l2 = [](const std::vector<double>& v) {
        double s = 0.0;
        for (double x : v) s += x * x;
        return std::sqrt(s);
    };
    double gap = 0.0;
    for (std::size_t l = 0; l < installed.size(); ++l) {
        const auto om = oracle[l].means();
        const auto ov = oracle[l].vars_sample();
        std::vector<double> dm(om.size()), dv(ov.size());
        for (std::size_t c = 0; c < om.size(); ++c) {
            dm[c] = installed[l].first[c] - om[c];
            dv[c] = installed[l].second[c] - ov[c];
        }
        gap += 0.5 * (l2(dm) / (l2(om) + 1e-12) + l2(dv) / (l2(ov) + 1e-12));
    }
    return gap / double(installed.size());
}

// --- serialization glue ---

inline void write_client_update(std::ostream& os, const ClientUpdate<float>& u) {
    detail::write_le<std::uint32_t>(os, std::uint32_t(u.id));
    detail::write_le<std::int64_t>(os, u.samples);
    write_params(os, u.weights);
    detail::write_le<std::uint32_t>(os, std::uint32_t(u.stats.size()));
    for (const auto& s : u.stats) write_channel_stats(os, s);
}

// Encode value-form statistics in the checkpoint's sufficient-stats schema:
// count, sum = mean*count, sumsq chosen so the sample variance decodes back.
inline ChannelStats encode_value_stats(const std::vector<double>& mean,
                                       const std::vector<double>& var, std::int64_t count) {
    ChannelStats s(mean.size());
    s.count = count;
    for (std::size_t c = 0; c < mean.size(); ++c) {
        s.sum[c] = mean[c] * double(count);
        s.sumsq[c] = var[c] * double(count - 1) + mean[c] * mean[c] * double(count);
    }
    return s;
}

template <class T>
void save_global_model(const std::string& path, GlobalModel<T>& global) {
    static_assert(std::is_same_v<T, float>, "checkpoints are defined for the float instantiation");
    ModelParams<float> params = global.model.extract_shared();
    std::vector<ChannelStats> stats;
    for (auto* n : global.model.norm_layers()) {
        if (auto* h = n->as_hbn()) {
            stats.push_back(encode_value_stats(h->global_mean(), h->global_var(),
                                               std::max<std::int64_t>(h->global_count(), 2)));
        } else if (auto* r = n->as_running()) {
            stats.push_back(encode_value_stats(r->running_mean(), r->running_var(), 2));
        }
    }
    write_checkpoint_file(path, params, stats);
}

template <class T>
void load_global_model(const std::string& path, GlobalModel<T>& global) {
    static_assert(std::is_same_v<T, float>, "checkpoints are defined for the float instantiation");
    CheckpointData data = read_checkpoint_file(path);
    global.model.load_shared(data.params);
    std::size_t i = 0;
    for (auto* n : global.model.norm_layers()) {
        if (auto* h = n->as_hbn()) {
            if (i >= data.stats.size()) throw FormatError("checkpoint: missing layer statistics");
            const ChannelStats& s = data.stats[i++];
            h->set_global_stats(s.means(), s.vars_sample(), s.count);
        } else if (auto* r = n->as_running()) {
            if (i >= data.stats.size()) throw FormatError("checkpoint: missing layer statistics");
            const ChannelStats& s = data.stats[i++];
            r->set_running_stats(s.means(), s.vars_sample());
        }
    }
    if (i != data.stats.size()) throw FormatError("checkpoint: extra layer statistics");
    if (i > 0) global.stats_ready = true;
}

}  // namespace fedhbn
