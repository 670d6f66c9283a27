#pragma once

#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "imm/labels.hpp"

namespace imm {

struct ConfusionCounts {
    std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
    friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

struct LabelCounts {
    std::string label;
    std::size_t tp = 0, fp = 0, fn = 0;
    friend bool operator==(const LabelCounts&, const LabelCounts&) = default;
};

// A ratio whose denominator was zero is reported as 0 with its flag set.
struct MetricFlags {
    bool precision_undefined = false;
    bool recall_undefined = false;
    bool f1_undefined = false;
    friend bool operator==(const MetricFlags&, const MetricFlags&) = default;
};

struct MetricsReport {
    TaskKind task = TaskKind::Binary;
    double accuracy = 0.0;  // binary: (TP+TN)/n; multi-label: exact set match
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    std::optional<double> jaccard_accuracy;  // multi-label only
    ConfusionCounts counts;                  // multi-label: pooled over labels
    std::vector<LabelCounts> per_label;      // multi-label only
    MetricFlags flags;
    std::size_t n_items = 0;
    std::string config_hash;

    friend bool operator==(const MetricsReport&, const MetricsReport&) = default;
};

MetricsReport binary_metrics(const std::vector<bool>& preds, const std::vector<bool>& golds);

// Label sets by display name; names outside the task's label set throw UnknownLabelName.
MetricsReport multilabel_metrics(const std::vector<std::set<std::string>>& preds,
                                 const std::vector<std::set<std::string>>& golds, TaskKind task);
MetricsReport multilabel_metrics(const std::vector<std::set<std::size_t>>& preds,
                                 const std::vector<std::set<std::size_t>>& golds, TaskKind task);

// Three decimals with the leading zero dropped: 0.8264 -> ".826", 1 -> "1.000".
std::string format_metric(double value);

nlohmann::json report_to_json(const MetricsReport& report);
MetricsReport report_from_json(const nlohmann::json& j);
std::string render_table(const MetricsReport& report);

// Writes `json_path` and a human-readable table next to it (same stem, .txt).
void emit_report(const MetricsReport& report, const std::filesystem::path& json_path);

}  // namespace imm
