#pragma once

#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "fedhbn/errors.hpp"

namespace fedhbn {

struct MetricsRow {
    int round = 0;
    std::string mode;
    std::optional<double> test_acc;
    std::optional<double> train_loss;
    std::optional<double> stats_gap;
    double lr = 0.0;
    std::vector<int> participants;
};

inline nlohmann::ordered_json metrics_row_json(const MetricsRow& row) {
    nlohmann::ordered_json j;
    j["round"] = row.round;
    j["mode"] = row.mode;
    if (row.test_acc)
        j["test_acc"] = *row.test_acc;
    else
        j["test_acc"] = nullptr;
    if (row.train_loss)
        j["train_loss"] = *row.train_loss;
    else
        j["train_loss"] = nullptr;
    if (row.stats_gap)
        j["stats_gap"] = *row.stats_gap;
    else
        j["stats_gap"] = nullptr;
    j["lr"] = row.lr;
    j["participants"] = row.participants;
    return j;
}

inline std::string metrics_row_line(const MetricsRow& row) {
    return metrics_row_json(row).dump();
}

// Append-only JSON-lines writer, one object per round.
class MetricsWriter {
public:
    MetricsWriter() = default;

    explicit MetricsWriter(const std::string& path) {
        if (!path.empty()) {
            file_.open(path, std::ios::trunc);
            if (!file_) throw ConfigError("metrics: cannot open '" + path + "' for writing");
        }
    }

    void write(const MetricsRow& row) {
        rows_.push_back(row);
        if (file_.is_open()) {
            file_ << metrics_row_line(row) << "\n";
            file_.flush();  // crash tolerance: every round survives
        }
    }

    const std::vector<MetricsRow>& rows() const { return rows_; }

private:
    std::ofstream file_;
    std::vector<MetricsRow> rows_;
};

}  // namespace fedhbn
