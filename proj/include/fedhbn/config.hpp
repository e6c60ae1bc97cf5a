#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>

#include "fedhbn/errors.hpp"
#include "fedhbn/federation.hpp"

namespace fedhbn {

enum class DatasetKind { SynthFlat, SynthConv, Cifar10 };

inline const char* dataset_kind_name(DatasetKind k) {
    switch (k) {
        case DatasetKind::SynthFlat: return "synth_flat";
        case DatasetKind::SynthConv: return "synth_conv";
        case DatasetKind::Cifar10: return "cifar10";
    }
    return "?";
}

// Full experiment description. Defaults follow the reference settings
// (lambda 0.01, momentum 0.9, epsilon 1e-5, one local epoch); `dataset` is
// the one required key.
struct ExperimentConfig {
    // data
    DatasetKind dataset = DatasetKind::SynthConv;
    bool dataset_set = false;
    std::size_t classes = 10;
    std::size_t features = 32;      // synth_flat width
    std::size_t image_size = 16;    // synth_conv height/width
    std::size_t train_samples = 400;
    std::size_t test_samples = 200;
    double separation = 1.5;
    std::string data_dir;           // cifar10 location (or FHBN_DATA_DIR)

    // federation
    std::size_t clients = 10;       // K
    double participation = 1.0;     // C
    int rounds = 10;                // T
    int local_epochs = 1;           // E
    std::size_t batch_size = 4;     // B
    double phi = 0.6;
    FedMode mode = FedMode::Hbn;

    // optimization
    double lr = 0.01;
    double lr_decay = 0.998;
    double momentum = 0.9;
    double lambda = 0.01;
    double epsilon = 1e-5;
    std::size_t gn_groups = 2;

    // plumbing
    std::uint64_t seed = 1;
    std::size_t stats_sample_cap = 0;  // 0 = full client dataset
    std::size_t min_client_samples = 0;  // 0 = default 2*B
    int eval_every = 1;
    bool measure_stats_gap = false;
    int threads = 1;
    std::string out;

    std::size_t effective_min_samples() const {
        return min_client_samples > 0 ? min_client_samples : 2 * batch_size;
    }
};

namespace detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline ConfigError cfg_err(int line, const std::string& msg) {
    return ConfigError("line " + std::to_string(line) + ": " + msg);
}

inline double parse_double(const std::string& v, int line, const std::string& key) {
    try {
        std::size_t pos = 0;
        const double d = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("");
        return d;
    } catch (...) {
        throw cfg_err(line, key + ": expected a number, got '" + v + "'");
    }
}

inline std::int64_t parse_int(const std::string& v, int line, const std::string& key) {
    try {
        std::size_t pos = 0;
        const long long d = std::stoll(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("");
        return d;
    } catch (...) {
        throw cfg_err(line, key + ": expected an integer, got '" + v + "'");
    }
}

inline std::uint64_t parse_u64(const std::string& v, int line, const std::string& key) {
    try {
        std::size_t pos = 0;
        const unsigned long long d = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("");
        return d;
    } catch (...) {
        throw cfg_err(line, key + ": expected a non-negative integer, got '" + v + "'");
    }
}

inline bool parse_bool(const std::string& v, int line, const std::string& key) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw cfg_err(line, key + ": expected true/false, got '" + v + "'");
}

}  // namespace detail

// Line-oriented `key = value` text; '#' starts a comment. Unknown keys,
// type errors and constraint violations are reported with line numbers.
inline ExperimentConfig parse_config(const std::string& text) {
    using detail::cfg_err;
    ExperimentConfig cfg;
    std::istringstream in(text);
    std::string raw;
    int lineno = 0;
    while (std::getline(in, raw)) {
        ++lineno;
        std::string line = raw;
        if (const auto hash = line.find('#'); hash != std::string::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw cfg_err(lineno, "expected 'key = value'");
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string value = detail::trim(line.substr(eq + 1));
        if (key.empty()) throw cfg_err(lineno, "empty key");
        if (value.empty()) throw cfg_err(lineno, key + ": empty value");

        if (key == "dataset") {
            if (value == "synth_flat")
                cfg.dataset = DatasetKind::SynthFlat;
            else if (value == "synth_conv")
                cfg.dataset = DatasetKind::SynthConv;
            else if (value == "cifar10")
                cfg.dataset = DatasetKind::Cifar10;
            else
                throw cfg_err(lineno, "dataset: unknown kind '" + value + "'");
            cfg.dataset_set = true;
        } else if (key == "classes") {
            const auto v = detail::parse_int(value, lineno, key);
            if (v < 2) throw cfg_err(lineno, "classes must be >= 2");
            cfg.classes = std::size_t(v);
        } else if (key == "features") {
            const auto v = detail::parse_int(value, lineno, key);
            if (v < 1) throw cfg_err(lineno, "features must be >= 1");
            cfg.features = std::size_t(v);
        } else if (key == "image_size") {
            const auto v = detail::parse_int(value, lineno, key);
            if (v < 8) throw cfg_err(lineno, "image_size must be >= 8");
            cfg.image_size = std::size_t(v);
        } else if (key == "train_samples") {
            const auto v = detail::parse_int(value, lineno, key);
            if (v < 1) throw cfg_err(lineno, "train_samples must be >= 1");
            cfg.train_samples = std::size_t(v);
        } else if (key == "test_samples") {
            const auto v = detail::parse_int(value, lineno, key);
            if (v < 1) throw cfg_err(lineno, "test_samples must be >= 1");
            cfg.test_samples = std::size_t(v);
        } else if (key == "separation") {
            const auto v = detail::parse_double(value, lineno, key);
            if (v < 0.0) throw cfg_err(lineno, "separation must be >= 0");
            cfg.separation = v;
        } else if (key == "data_dir") {
            cfg.data_dir = value;
        } else if (key == "clients") {
            const auto v = detail::parse_int(value, lineno, key);
            if (v < 1) throw cfg_err(lineno, "clients must be >= 1");
            cfg.clients = std::size_t(v);
        } else if (key == "participation") {
            const auto v = detail::parse_double(value, lineno, key);
            if (!(v > 0.0) || v > 1.0) throw cfg_err(lineno, "participation must be in (0, 1]");
            cfg.participation = v;
        } else if (key == "rounds") {
            const auto v = detail::parse_int(value, lineno, key);
            if (v < 0) throw cfg_err(lineno, "rounds must be >= 0");
            cfg.rounds = int(v);
        } else if (key == "local_epochs") {
            const auto v = detail::parse_int(value, lineno, key);
            if (v < 0) throw cfg_err(lineno, "local_epochs must be >= 0");
            cfg.local_epochs = int(v);
        } else if (key == "batch_size") {
            const auto v = detail::parse_int(value, lineno, key);
            if (v < 1) throw cfg_err(lineno, "batch_size must be >= 1");
            cfg.batch_size = std::size_t(v);
        } else if (key == "phi") {
            const auto v = detail::parse_double(value, lineno, key);
            if (!(v > 0.0)) throw cfg_err(lineno, "phi must be > 0");
            cfg.phi = v;
        } else if (key == "norm") {
            try {
                cfg.mode = parse_fed_mode(value);
            } catch (const ConfigError& e) {
                throw cfg_err(lineno, e.what());
            }
        } else if (key == "lr") {
            const auto v = detail::parse_double(value, lineno, key);
            if (v < 0.0) throw cfg_err(lineno, "lr must be >= 0");
            cfg.lr = v;
        } else if (key == "lr_decay") {
            const auto v = detail::parse_double(value, lineno, key);
            if (!(v > 0.0) || v > 1.0) throw cfg_err(lineno, "lr_decay must be in (0, 1]");
            cfg.lr_decay = v;
        } else if (key == "momentum") {
            const auto v = detail::parse_double(value, lineno, key);
            if (v < 0.0 || v >= 1.0) throw cfg_err(lineno, "momentum must be in [0, 1)");
            cfg.momentum = v;
        } else if (key == "lambda") {
            const auto v = detail::parse_double(value, lineno, key);
            if (!(v > 0.0) || v > 1.0) throw cfg_err(lineno, "lambda must be in (0, 1]");
            cfg.lambda = v;
        } else if (key == "epsilon") {
            const auto v = detail::parse_double(value, lineno, key);
            if (!(v > 0.0)) throw cfg_err(lineno, "epsilon must be > 0");
            cfg.epsilon = v;
        } else if (key == "gn_groups") {
            const auto v = detail::parse_int(value, lineno, key);
            if (v < 1) throw cfg_err(lineno, "gn_groups must be >= 1");
            cfg.gn_groups = std::size_t(v);
        } else if (key == "seed") {
            cfg.seed = detail::parse_u64(value, lineno, key);
        } else if (key == "stats_sample_cap") {
            const auto v = detail::parse_int(value, lineno, key);
            if (v < 0) throw cfg_err(lineno, "stats_sample_cap must be >= 0");
            cfg.stats_sample_cap = std::size_t(v);
        } else if (key == "min_client_samples") {
            const auto v = detail::parse_int(value, lineno, key);
            if (v < 1) throw cfg_err(lineno, "min_client_samples must be >= 1");
            cfg.min_client_samples = std::size_t(v);
        } else if (key == "eval_every") {
            const auto v = detail::parse_int(value, lineno, key);
            if (v < 1) throw cfg_err(lineno, "eval_every must be >= 1");
            cfg.eval_every = int(v);
        } else if (key == "measure_stats_gap") {
            cfg.measure_stats_gap = detail::parse_bool(value, lineno, key);
        } else if (key == "threads") {
            const auto v = detail::parse_int(value, lineno, key);
            if (v < 1) throw cfg_err(lineno, "threads must be >= 1");
            cfg.threads = int(v);
        } else if (key == "out") {
            cfg.out = value;
        } else {
            throw cfg_err(lineno, "unknown key '" + key + "'");
        }
    }

    if (!cfg.dataset_set)
        throw ConfigError("missing required key 'dataset' (synth_flat | synth_conv | cifar10)");
    if (std::size_t(std::ceil(cfg.participation * double(cfg.clients))) < 1)
        throw ConfigError("participation * clients must select at least one client");
    return cfg;
}

inline ExperimentConfig parse_config_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file '" + path + "'");
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse_config(ss.str());
}

}  // namespace fedhbn
