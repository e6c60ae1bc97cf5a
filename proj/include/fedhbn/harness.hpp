#pragma once

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "fedhbn/cifar10.hpp"
#include "fedhbn/config.hpp"
#include "fedhbn/federation.hpp"
#include "fedhbn/gradcheck.hpp"
#include "fedhbn/metrics.hpp"
#include "fedhbn/partition.hpp"

namespace fedhbn {

// Small dense network for the flat synthetic path: fc + norm + relu + fc.
template <class T>
Model<T> build_mlp(std::size_t features, std::size_t num_classes, NormKind norm,
                   std::size_t hidden = 64, double eps = 1e-5, std::size_t gn_groups = 2) {
    Model<T> m;
    m.add("fc1", std::make_unique<Dense<T>>(features, hidden));
    if (auto n = make_norm_layer<T>(norm, hidden, eps, gn_groups)) m.add("norm1", std::move(n));
    m.add("relu1", std::make_unique<ReLU<T>>());
    m.add("fc2", std::make_unique<Dense<T>>(hidden, num_classes));
    return m;
}

struct DataBundle {
    Dataset<float> train;
    Dataset<float> test;
};

inline DataBundle build_datasets(const ExperimentConfig& cfg) {
    DataBundle out;
    const std::uint64_t data_seed = derive_seed(cfg.seed, "data");
    switch (cfg.dataset) {
        case DatasetKind::SynthFlat: {
            const std::size_t total = cfg.train_samples + cfg.test_samples;
            Dataset<float> all =
                synth_classification<float>(cfg.classes, cfg.features, total, cfg.separation,
                                            data_seed);
            std::vector<int> tr(cfg.train_samples), te(cfg.test_samples);
            std::iota(tr.begin(), tr.end(), 0);
            std::iota(te.begin(), te.end(), int(cfg.train_samples));
            out.train = all.subset(tr);
            out.test = all.subset(te);
            break;
        }
        case DatasetKind::SynthConv: {
            const std::size_t total = cfg.train_samples + cfg.test_samples;
            Dataset<float> all = synth_conv_classification<float>(cfg.classes, cfg.image_size,
                                                                  total, cfg.separation, data_seed);
            std::vector<int> tr(cfg.train_samples), te(cfg.test_samples);
            std::iota(tr.begin(), tr.end(), 0);
            std::iota(te.begin(), te.end(), int(cfg.train_samples));
            out.train = all.subset(tr);
            out.test = all.subset(te);
            break;
        }
        case DatasetKind::Cifar10: {
            std::string dir = cfg.data_dir;
            if (dir.empty()) {
                if (const char* env = std::getenv("FHBN_DATA_DIR")) dir = env;
            }
            if (dir.empty())
                throw ConfigError("cifar10: set data_dir in the config or FHBN_DATA_DIR");
            out.train = load_cifar10_train<float>(dir);
            out.test = load_cifar10_test<float>(dir);
            if (cfg.train_samples < out.train.size()) {
                std::vector<int> tr(cfg.train_samples);
                std::iota(tr.begin(), tr.end(), 0);
                out.train = out.train.subset(tr);
            }
            if (cfg.test_samples < out.test.size()) {
                std::vector<int> te(cfg.test_samples);
                std::iota(te.begin(), te.end(), 0);
                out.test = out.test.subset(te);
            }
            break;
        }
    }
    return out;
}

inline Model<float> build_model(const ExperimentConfig& cfg) {
    const NormKind norm = norm_kind_for(cfg.mode);
    Model<float> model;
    if (cfg.dataset == DatasetKind::SynthFlat)
        model = build_mlp<float>(cfg.features, cfg.classes, norm, 64, cfg.epsilon, cfg.gn_groups);
    else if (cfg.dataset == DatasetKind::SynthConv)
        model = build_simple_cnn<float>(cfg.classes, norm, cfg.image_size, cfg.epsilon,
                                        cfg.gn_groups);
    else
        model = build_simple_cnn<float>(cfg.classes, norm, 32, cfg.epsilon, cfg.gn_groups);
    // FixBN: first half of the rounds is the statistics-updating stage
    model.set_fixbn_freeze_round((cfg.rounds + 1) / 2);
    init_model(model, derive_seed(cfg.seed, "init"));
    return model;
}

// Argmax-logit accuracy in Eval mode; deterministic and side-effect free.
template <class T>
double evaluate_accuracy(Model<T>& model, const Dataset<T>& test, std::size_t batch = 256) {
    if (test.size() == 0) throw DataError("evaluate_accuracy: empty test set");
    std::size_t correct = 0;
    std::vector<int> idx(test.size());
    std::iota(idx.begin(), idx.end(), 0);
    for (std::size_t start = 0; start < idx.size(); start += batch) {
        const std::size_t len = std::min(batch, idx.size() - start);
        std::span<const int> part(idx.data() + start, len);
        Tensor<T> images = test.gather_images(part);
        Tensor<T> logits = model.forward(images, NormMode::Eval);
        const std::size_t c = logits.dim(1);
        for (std::size_t i = 0; i < len; ++i) {
            const T* row = logits.data.data() + i * c;
            std::size_t best = 0;
            for (std::size_t j = 1; j < c; ++j)
                if (row[j] > row[best]) best = j;
            if (int(best) == test.labels[start + i]) ++correct;
        }
    }
    return double(correct) / double(test.size());
}

struct TrainingResult {
    GlobalModel<float> global;
    std::vector<ClientRecord<float>> clients;
    Dataset<float> test;
    std::vector<MetricsRow> rows;
    double final_acc = 0.0;
};

// Full protocol run: optional statistics bootstrap, T weight rounds, and
// (separated-statistics mode) the closing statistics-only synchronization.
inline TrainingResult run_training(const ExperimentConfig& cfg, MetricsWriter* writer = nullptr) {
    TrainingResult result;
    DataBundle data = build_datasets(cfg);

    PartitionSpec pspec;
    pspec.clients = cfg.clients;
    pspec.phi = cfg.phi;
    pspec.seed = derive_seed(cfg.seed, "partition");
    pspec.min_samples = cfg.effective_min_samples();
    auto parts = dirichlet_partition(data.train.labels, cfg.classes, pspec);

    result.clients.resize(cfg.clients);
    for (std::size_t k = 0; k < cfg.clients; ++k) {
        result.clients[k].id = int(k);
        result.clients[k].data = data.train.subset(parts[k]);
    }
    result.test = std::move(data.test);

    result.global.model = build_model(cfg);
    result.global.round = 0;

    RoundConfig rc;
    rc.epochs = cfg.local_epochs;
    rc.batch = cfg.batch_size;
    rc.momentum = cfg.momentum;
    rc.lambda = cfg.lambda;
    rc.stats_sample_cap = cfg.stats_sample_cap;
    rc.master_seed = cfg.seed;
    rc.threads = cfg.threads;

    std::vector<const Dataset<float>*> participant_shards;
    auto emit = [&](MetricsRow row) {
        if (writer) writer->write(row);
        result.rows.push_back(std::move(row));
    };
    auto gap_if_requested = [&](const RoundPlan& plan) -> std::optional<double> {
        if (!cfg.measure_stats_gap) return std::nullopt;
        participant_shards.clear();
        for (int id : plan.participants)
            participant_shards.push_back(&result.clients[std::size_t(id)].data);
        return stats_gap_vs_oracle(result.global, participant_shards);
    };

    // statistics bootstrap before the first weight round
    if (cfg.mode == FedMode::Hbn && cfg.rounds >= 1) {
        RoundPlan plan = make_round_plan(0, result.clients, cfg.participation, cfg.seed);
        rc.lr = 0.0;
        run_stats_round(result.global, result.clients, plan, rc);
        MetricsRow row;
        row.round = 0;
        row.mode = fed_mode_name(cfg.mode);
        row.test_acc = evaluate_accuracy(result.global.model, result.test);
        row.stats_gap = gap_if_requested(plan);
        row.lr = 0.0;
        row.participants = plan.participants;
        emit(std::move(row));
    }

    for (int t = 1; t <= cfg.rounds; ++t) {
        const double lr_t = cfg.lr * std::pow(cfg.lr_decay, double(t - 1));
        rc.lr = lr_t;
        RoundPlan plan = make_round_plan(t, result.clients, cfg.participation, cfg.seed);
        RoundOutcome outcome = run_round(result.global, result.clients, plan, cfg.mode, rc);

        MetricsRow row;
        row.round = t;
        row.mode = fed_mode_name(cfg.mode);
        if (t % cfg.eval_every == 0 || t == cfg.rounds)
            row.test_acc = evaluate_accuracy(result.global.model, result.test);
        row.train_loss = outcome.train_loss;
        row.stats_gap = gap_if_requested(plan);
        row.lr = lr_t;
        row.participants = plan.participants;
        emit(std::move(row));
    }

    // closing statistics-only synchronization round
    if (cfg.mode == FedMode::Hbn) {
        const int t = cfg.rounds + 1;
        RoundPlan plan = make_round_plan(t, result.clients, cfg.participation, cfg.seed);
        rc.lr = 0.0;
        run_stats_round(result.global, result.clients, plan, rc);
        MetricsRow row;
        row.round = t;
        row.mode = fed_mode_name(cfg.mode);
        row.test_acc = evaluate_accuracy(result.global.model, result.test);
        row.stats_gap = gap_if_requested(plan);
        row.lr = 0.0;
        row.participants = plan.participants;
        emit(std::move(row));
    }

    result.final_acc = evaluate_accuracy(result.global.model, result.test);
    return result;
}

// --- sweeps ---

enum class SweepAxis { BatchSize, Phi, NormMode };

inline SweepAxis parse_sweep_axis(const std::string& s) {
    if (s == "batch_size") return SweepAxis::BatchSize;
    if (s == "phi") return SweepAxis::Phi;
    if (s == "norm_mode") return SweepAxis::NormMode;
    throw ConfigError("unknown sweep axis '" + s + "' (batch_size | phi | norm_mode)");
}

struct SweepCell {
    std::string axis;
    std::string value;
    std::string mode;
    bool ok = false;
    std::string error;
    double final_acc = 0.0;
    double final_train_loss = 0.0;
    std::vector<MetricsRow> rows;
};

// One seeded experiment per value. Batch-size sweeps apply the linear
// learning-rate scaling rule relative to the reference batch size 4.
inline std::vector<SweepCell> run_sweep(const ExperimentConfig& base, SweepAxis axis,
                                        const std::vector<std::string>& values,
                                        const std::string& out_dir = "") {
    if (values.empty()) throw ConfigError("run_sweep: empty value list");
    std::vector<SweepCell> cells;
    for (const std::string& v : values) {
        SweepCell cell;
        cell.value = v;
        ExperimentConfig cfg = base;
        try {
            switch (axis) {
                case SweepAxis::BatchSize: {
                    cell.axis = "batch_size";
                    const long long b = std::stoll(v);
                    if (b < 1) throw ConfigError("batch_size must be >= 1");
                    cfg.batch_size = std::size_t(b);
                    cfg.lr = base.lr * double(b) / 4.0;  // linear scaling, reference B=4
                    break;
                }
                case SweepAxis::Phi: {
                    cell.axis = "phi";
                    cfg.phi = std::stod(v);
                    if (!(cfg.phi > 0.0)) throw ConfigError("phi must be > 0");
                    break;
                }
                case SweepAxis::NormMode: {
                    cell.axis = "norm_mode";
                    cfg.mode = parse_fed_mode(v);
                    break;
                }
            }
            cell.mode = fed_mode_name(cfg.mode);
            MetricsWriter writer(out_dir.empty()
                                     ? std::string()
                                     : out_dir + "/" + cell.axis + "_" + v + "_" + cell.mode +
                                           ".jsonl");
            TrainingResult res = run_training(cfg, &writer);
            cell.rows = res.rows;
            cell.final_acc = res.final_acc;
            for (auto it = res.rows.rbegin(); it != res.rows.rend(); ++it) {
                if (it->train_loss) {
                    cell.final_train_loss = *it->train_loss;
                    break;
                }
            }
            cell.ok = true;
        } catch (const std::exception& e) {
            cell.ok = false;
            cell.error = e.what();
        }
        cells.push_back(std::move(cell));
    }
    return cells;
}

inline std::string sweep_summary_csv(const std::vector<SweepCell>& cells) {
    std::ostringstream csv;
    csv << "axis,value,mode,status,final_acc,final_train_loss,error\n";
    for (const auto& c : cells) {
        csv << c.axis << "," << c.value << "," << c.mode << ","
            << (c.ok ? "ok" : "failed") << ",";
        if (c.ok)
            csv << c.final_acc << "," << c.final_train_loss << ",";
        else
            csv << ",,\"" << c.error << "\"";
        csv << "\n";
    }
    return csv.str();
}

// --- oracle checks (unbiased aggregation and the naive-averaging bias) ---

struct OracleReport {
    double max_rel_err = 0.0;      // separated aggregation vs pooled pass
    double gap_low_phi = 0.0;      // naive-BN gap at phi = 0.1
    double gap_high_phi = 0.0;     // naive-BN gap at phi = 10
    std::vector<double> per_seed_gap_low, per_seed_gap_high;
    bool pass = false;
};

// One separated statistics round against the pooled brute-force oracle:
// per-layer aggregated (mean, variance) must match a single CollectStats
// pass over the union of the client shards.
inline double unbiasedness_max_rel_err(const ExperimentConfig& cfg) {
    ExperimentConfig c = cfg;
    c.mode = FedMode::Hbn;
    DataBundle data = build_datasets(c);
    PartitionSpec pspec;
    pspec.clients = c.clients;
    pspec.phi = c.phi;
    pspec.seed = derive_seed(c.seed, "partition");
    pspec.min_samples = 2;
    auto parts = dirichlet_partition(data.train.labels, c.classes, pspec);

    std::vector<ClientRecord<float>> clients(c.clients);
    for (std::size_t k = 0; k < c.clients; ++k) {
        clients[k].id = int(k);
        clients[k].data = data.train.subset(parts[k]);
    }
    GlobalModel<float> global;
    global.model = build_model(c);

    RoundPlan plan = make_round_plan(1, clients, 1.0, c.seed);
    std::vector<ClientUpdate<float>> updates(plan.participants.size());
    for (std::size_t i = 0; i < plan.participants.size(); ++i) {
        const int id = plan.participants[i];
        updates[i].id = id;
        updates[i].samples = clients[std::size_t(id)].samples();
        updates[i].stats = client_collect_stats(global, clients[std::size_t(id)].data);
    }
    auto agg = aggregate_stats_unbiased(updates, plan);

    std::vector<const Dataset<float>*> shards;
    for (const auto& cl : clients) shards.push_back(&cl.data);
    auto pooled = union_collect_stats(global, shards);

    double worst = 0.0;
    for (std::size_t l = 0; l < agg.size(); ++l) {
        for (std::size_t ch = 0; ch < agg[l].mean.size(); ++ch) {
            const double om = pooled[l].mean(ch);
            const double ov = pooled[l].var_sample(ch);
            worst = std::max(worst,
                             std::fabs(agg[l].mean[ch] - om) / std::max(std::fabs(om), 1e-8));
            worst = std::max(worst,
                             std::fabs(agg[l].var[ch] - ov) / std::max(std::fabs(ov), 1e-8));
        }
    }
    return worst;
}

// Naive-BN statistics gap against the pooled oracle after a short run.
inline double naive_bias_gap(const ExperimentConfig& base, double phi, std::uint64_t seed) {
    ExperimentConfig cfg = base;
    cfg.mode = FedMode::NaiveBn;
    cfg.phi = phi;
    cfg.seed = seed;
    TrainingResult res = run_training(cfg);
    std::vector<const Dataset<float>*> shards;
    for (const auto& cl : res.clients) shards.push_back(&cl.data);
    return stats_gap_vs_oracle(res.global, shards);
}

inline OracleReport run_oracle_check(const ExperimentConfig& base,
                                     const std::vector<std::uint64_t>& seeds = {11, 23, 47}) {
    OracleReport rep;
    rep.max_rel_err = unbiasedness_max_rel_err(base);

    ExperimentConfig bias_cfg = base;
    bias_cfg.rounds = 3;
    bias_cfg.local_epochs = 1;
    for (std::uint64_t s : seeds) {
        rep.per_seed_gap_low.push_back(naive_bias_gap(bias_cfg, 0.1, s));
        rep.per_seed_gap_high.push_back(naive_bias_gap(bias_cfg, 10.0, s));
    }
    for (double g : rep.per_seed_gap_low) rep.gap_low_phi += g / double(seeds.size());
    for (double g : rep.per_seed_gap_high) rep.gap_high_phi += g / double(seeds.size());
    rep.pass = rep.max_rel_err < 1e-5;
    return rep;
}

// --- Fig.-2-style toy panels ---

struct ToyFig2 {
    ToyCluster raw_a, raw_b;
    ToyCluster local_a, local_b;
    ToyCluster global_a, global_b;
    ToyCluster hybrid_a, hybrid_b;
    double dist_raw = 0.0, dist_local = 0.0, dist_global = 0.0, dist_hybrid = 0.0;
};

namespace detail {

inline std::array<double, 2> cluster_mean(const ToyCluster& c) {
    std::array<double, 2> m{0.0, 0.0};
    for (const auto& p : c.points) {
        m[0] += p[0];
        m[1] += p[1];
    }
    m[0] /= double(c.points.size());
    m[1] /= double(c.points.size());
    return m;
}

inline std::array<double, 2> cluster_var(const ToyCluster& c, const std::array<double, 2>& m) {
    std::array<double, 2> v{0.0, 0.0};
    for (const auto& p : c.points) {
        v[0] += (p[0] - m[0]) * (p[0] - m[0]);
        v[1] += (p[1] - m[1]) * (p[1] - m[1]);
    }
    v[0] /= double(c.points.size());
    v[1] /= double(c.points.size());
    return v;
}

inline ToyCluster normalize_cluster(const ToyCluster& c, const std::array<double, 2>& mean,
                                    const std::array<double, 2>& var, double eps) {
    ToyCluster out;
    out.points.reserve(c.points.size());
    for (const auto& p : c.points)
        out.points.push_back({(p[0] - mean[0]) / std::sqrt(var[0] + eps),
                              (p[1] - mean[1]) / std::sqrt(var[1] + eps)});
    return out;
}

inline double mean_distance(const ToyCluster& a, const ToyCluster& b) {
    const auto ma = cluster_mean(a), mb = cluster_mean(b);
    return std::hypot(ma[0] - mb[0], ma[1] - mb[1]);
}

}  // namespace detail

// Four panels: raw data, per-cluster normalization, pooled-global
// normalization, and the hybrid mix at alpha = 0.
inline ToyFig2 make_toy_fig2(std::size_t n_per_cluster = 2000, std::uint64_t seed = 7,
                             double eps = 1e-5) {
    ToyFig2 fig;
    auto [a, b] = make_two_cluster_toy(n_per_cluster, {2.0, 1.0}, Cov2{0.35, 0.10, 0.25},
                                       {-1.5, -0.5}, Cov2{1.30, -0.25, 0.90}, seed);
    fig.raw_a = a;
    fig.raw_b = b;

    const auto ma = detail::cluster_mean(a), mb = detail::cluster_mean(b);
    const auto va = detail::cluster_var(a, ma), vb = detail::cluster_var(b, mb);

    // pooled statistics via the sufficient-stats route
    ChannelStats pooled(2);
    for (const auto& p : a.points) {
        pooled.sum[0] += p[0];
        pooled.sum[1] += p[1];
        pooled.sumsq[0] += p[0] * p[0];
        pooled.sumsq[1] += p[1] * p[1];
    }
    for (const auto& p : b.points) {
        pooled.sum[0] += p[0];
        pooled.sum[1] += p[1];
        pooled.sumsq[0] += p[0] * p[0];
        pooled.sumsq[1] += p[1] * p[1];
    }
    pooled.count = std::int64_t(a.points.size() + b.points.size());
    const std::array<double, 2> mg{pooled.mean(0), pooled.mean(1)};
    const std::array<double, 2> vg{pooled.var_sample(0), pooled.var_sample(1)};

    fig.local_a = detail::normalize_cluster(a, ma, va, eps);
    fig.local_b = detail::normalize_cluster(b, mb, vb, eps);
    fig.global_a = detail::normalize_cluster(a, mg, vg, eps);
    fig.global_b = detail::normalize_cluster(b, mg, vg, eps);
    // alpha = 0: equal-weight mix of cluster and pooled statistics
    const std::array<double, 2> hma{0.5 * (ma[0] + mg[0]), 0.5 * (ma[1] + mg[1])};
    const std::array<double, 2> hva{0.5 * (va[0] + vg[0]), 0.5 * (va[1] + vg[1])};
    const std::array<double, 2> hmb{0.5 * (mb[0] + mg[0]), 0.5 * (mb[1] + mg[1])};
    const std::array<double, 2> hvb{0.5 * (vb[0] + vg[0]), 0.5 * (vb[1] + vg[1])};
    fig.hybrid_a = detail::normalize_cluster(a, hma, hva, eps);
    fig.hybrid_b = detail::normalize_cluster(b, hmb, hvb, eps);

    fig.dist_raw = detail::mean_distance(fig.raw_a, fig.raw_b);
    fig.dist_local = detail::mean_distance(fig.local_a, fig.local_b);
    fig.dist_global = detail::mean_distance(fig.global_a, fig.global_b);
    fig.dist_hybrid = detail::mean_distance(fig.hybrid_a, fig.hybrid_b);
    return fig;
}

inline std::string toy_fig2_csv(const ToyFig2& fig) {
    std::ostringstream csv;
    csv << "panel,cluster,x,y\n";
    auto dump = [&](const char* panel, const char* cluster, const ToyCluster& c) {
        for (const auto& p : c.points)
            csv << panel << "," << cluster << "," << p[0] << "," << p[1] << "\n";
    };
    dump("raw", "a", fig.raw_a);
    dump("raw", "b", fig.raw_b);
    dump("local", "a", fig.local_a);
    dump("local", "b", fig.local_b);
    dump("global", "a", fig.global_a);
    dump("global", "b", fig.global_b);
    dump("hybrid", "a", fig.hybrid_a);
    dump("hybrid", "b", fig.hybrid_b);
    return csv.str();
}

// Partition audit export: {client_id: [indices]}.
inline std::string partition_json(const std::vector<std::vector<int>>& parts) {
    nlohmann::ordered_json j;
    for (std::size_t k = 0; k < parts.size(); ++k) j[std::to_string(k)] = parts[k];
    return j.dump();
}

}  // namespace fedhbn
