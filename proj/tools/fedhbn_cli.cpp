// Experiment front door: run / sweep / oracle-check / gradient-check /
// toy-fig2 subcommands over the federated HBN simulator.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "fedhbn/gradient_suite.hpp"
#include "fedhbn/harness.hpp"

namespace fs = std::filesystem;
using namespace fedhbn;

namespace {

struct CommonOpts {
    std::string config_path;
    std::string out;
    std::uint64_t seed = 0;
    bool seed_set = false;
    int threads = 0;
};

ExperimentConfig load_config(const CommonOpts& opts, bool required = true) {
    ExperimentConfig cfg;
    if (!opts.config_path.empty()) {
        cfg = parse_config_file(opts.config_path);
    } else if (required) {
        throw ConfigError("--config is required for this subcommand");
    } else {
        // built-in 5-client synthetic default for the oracle checks
        cfg = parse_config(
            "dataset = synth_conv\n"
            "clients = 5\n"
            "participation = 1.0\n"
            "rounds = 3\n"
            "batch_size = 4\n"
            "phi = 0.1\n"
            "lambda = 1.0\n"
            "image_size = 16\n"
            "train_samples = 200\n"
            "test_samples = 50\n");
    }
    if (opts.seed_set) cfg.seed = opts.seed;
    if (opts.threads > 0) cfg.threads = opts.threads;
    if (!opts.out.empty()) cfg.out = opts.out;
    return cfg;
}

void ensure_out_dir(const std::string& out) {
    if (!out.empty()) fs::create_directories(out);
}

int cmd_run(const CommonOpts& opts) {
    ExperimentConfig cfg = load_config(opts);
    ensure_out_dir(cfg.out);
    const std::string metrics_path = cfg.out.empty() ? "" : cfg.out + "/metrics.jsonl";
    MetricsWriter writer(metrics_path);
    TrainingResult res = run_training(cfg, &writer);
    if (!cfg.out.empty()) {
        save_global_model(cfg.out + "/model.fhbn", res.global);
        std::printf("metrics: %s\ncheckpoint: %s\n", metrics_path.c_str(),
                    (cfg.out + "/model.fhbn").c_str());
    }
    std::printf("mode=%s rounds=%d final_test_acc=%.4f\n", fed_mode_name(cfg.mode), cfg.rounds,
                res.final_acc);
    return 0;
}

int cmd_sweep(const CommonOpts& opts, const std::string& axis_str,
              const std::string& values_csv) {
    ExperimentConfig cfg = load_config(opts);
    ensure_out_dir(cfg.out);
    std::vector<std::string> values;
    std::stringstream ss(values_csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) values.push_back(item);
    }
    const SweepAxis axis = parse_sweep_axis(axis_str);
    auto cells = run_sweep(cfg, axis, values, cfg.out);
    const std::string csv = sweep_summary_csv(cells);
    if (!cfg.out.empty()) {
        std::ofstream f(cfg.out + "/sweep_summary.csv");
        f << csv;
        std::printf("summary: %s/sweep_summary.csv\n", cfg.out.c_str());
    }
    std::fputs(csv.c_str(), stdout);
    bool any_failed = false;
    for (const auto& c : cells) any_failed |= !c.ok;
    return any_failed ? 1 : 0;
}

int cmd_oracle_check(const CommonOpts& opts) {
    ExperimentConfig cfg = load_config(opts, /*required=*/false);
    OracleReport rep = run_oracle_check(cfg);
    std::printf("unbiasedness: max relative stats gap vs pooled oracle = %.3e (tolerance 1e-5)\n",
                rep.max_rel_err);
    for (std::size_t i = 0; i < rep.per_seed_gap_low.size(); ++i)
        std::printf("naive-bn bias gap, seed %zu: phi=0.1 -> %.4f | phi=10 -> %.4f\n", i,
                    rep.per_seed_gap_low[i], rep.per_seed_gap_high[i]);
    std::printf("naive-bn mean bias gap: phi=0.1 -> %.4f, phi=10 -> %.4f\n", rep.gap_low_phi,
                rep.gap_high_phi);
    std::printf("%s\n", rep.pass ? "PASS" : "FAIL");
    return rep.pass ? 0 : 1;
}

int cmd_gradient_check() {
    auto entries = run_gradient_suite();
    bool all_ok = true;
    for (const auto& e : entries) {
        std::printf("%-22s max rel err %.3e  %s\n", e.name.c_str(), e.max_rel_err,
                    e.pass() ? "ok" : "FAIL");
        all_ok &= e.pass();
    }
    std::printf("%s\n", all_ok ? "PASS" : "FAIL");
    return all_ok ? 0 : 1;
}

int cmd_toy_fig2(const CommonOpts& opts) {
    ToyFig2 fig = make_toy_fig2(2000, opts.seed_set ? opts.seed : 7);
    const std::string out_dir = opts.out.empty() ? "." : opts.out;
    ensure_out_dir(out_dir);
    const std::string path = out_dir + "/toy_fig2.csv";
    std::ofstream f(path);
    if (!f) throw ConfigError("cannot write " + path);
    f << toy_fig2_csv(fig);
    std::printf("panels: %s\n", path.c_str());
    std::printf("cluster-mean distance  raw=%.4f local=%.4f global=%.4f hybrid=%.4f\n",
                fig.dist_raw, fig.dist_local, fig.dist_global, fig.dist_hybrid);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"federated hybrid batch normalisation simulator"};
    app.require_subcommand(1);

    CommonOpts opts;
    auto add_common = [&](CLI::App* sub, bool with_config = true) {
        if (with_config) sub->add_option("--config", opts.config_path, "experiment config file");
        sub->add_option("--out", opts.out, "output directory");
        sub->add_option("--seed", opts.seed, "master seed override")
            ->each([&](const std::string&) { opts.seed_set = true; });
        sub->add_option("--threads", opts.threads, "parallel clients per round");
    };

    CLI::App* run = app.add_subcommand("run", "run one seeded experiment");
    add_common(run);

    CLI::App* sweep = app.add_subcommand("sweep", "run a sweep over one axis");
    add_common(sweep);
    std::string axis, values;
    sweep->add_option("--axis", axis, "batch_size | phi | norm_mode")->required();
    sweep->add_option("--values", values, "comma-separated cell values")->required();

    CLI::App* oracle = app.add_subcommand(
        "oracle-check", "pooled-statistics equality and naive-averaging bias measurements");
    add_common(oracle);

    app.add_subcommand("gradient-check", "finite-difference verification of every layer");

    CLI::App* toy = app.add_subcommand("toy-fig2", "emit the two-cluster normalization panels");
    add_common(toy, /*with_config=*/false);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n\n" << app.help() << std::endl;
        return 2;
    }

    try {
        if (app.got_subcommand("run")) return cmd_run(opts);
        if (app.got_subcommand("sweep")) return cmd_sweep(opts, axis, values);
        if (app.got_subcommand("oracle-check")) return cmd_oracle_check(opts);
        if (app.got_subcommand("gradient-check")) return cmd_gradient_check();
        if (app.got_subcommand("toy-fig2")) return cmd_toy_fig2(opts);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << std::endl;
        return 1;
    }
    return 2;
}
