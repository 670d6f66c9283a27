#include "imm/eval.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "imm/error.hpp"

namespace imm {

using nlohmann::json;

namespace {

double ratio(std::size_t num, std::size_t den, bool& undefined) {
    undefined = den == 0;
    return undefined ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

void fill_prf(MetricsReport& r) {
    const auto& c = r.counts;
    r.precision = ratio(c.tp, c.tp + c.fp, r.flags.precision_undefined);
    r.recall = ratio(c.tp, c.tp + c.fn, r.flags.recall_undefined);
    r.f1 = ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn, r.flags.f1_undefined);
}

template <class A, class B>
void check_lengths(const A& preds, const B& golds) {
    if (preds.size() != golds.size())
        throw Error(Errc::LengthMismatch, std::to_string(preds.size()) + " predictions vs " +
                                              std::to_string(golds.size()) + " gold labels");
    if (preds.empty()) throw Error(Errc::EmptyInput, "no items to score");
}

}  // namespace

MetricsReport binary_metrics(const std::vector<bool>& preds, const std::vector<bool>& golds) {
    check_lengths(preds, golds);
    MetricsReport r;
    r.task = TaskKind::Binary;
    r.n_items = preds.size();
    for (std::size_t i = 0; i < preds.size(); ++i) {
        if (preds[i] && golds[i]) ++r.counts.tp;
        else if (preds[i]) ++r.counts.fp;
        else if (golds[i]) ++r.counts.fn;
        else ++r.counts.tn;
    }
    r.accuracy = static_cast<double>(r.counts.tp + r.counts.tn) / static_cast<double>(r.n_items);
    fill_prf(r);
    return r;
}

MetricsReport multilabel_metrics(const std::vector<std::set<std::size_t>>& preds,
                                 const std::vector<std::set<std::size_t>>& golds, TaskKind task) {
    check_lengths(preds, golds);
    if (task == TaskKind::Binary) throw Error(Errc::TaskMismatch, "multilabel_metrics needs a multi-label task");
    const std::size_t labels = label_dimension(task);
    MetricsReport r;
    r.task = task;
    r.n_items = preds.size();
    for (std::size_t j = 0; j < labels; ++j) r.per_label.push_back({std::string(task_label_name(task, j)), 0, 0, 0});
    std::size_t exact = 0;
    double jaccard = 0.0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        for (const auto* set : {&preds[i], &golds[i]})
            for (auto j : *set)
                if (j >= labels) throw Error(Errc::UnknownLabelName, "label index " + std::to_string(j) + " out of range");
        std::size_t inter = 0;
        for (std::size_t j = 0; j < labels; ++j) {
            const bool p = preds[i].contains(j), g = golds[i].contains(j);
            auto& lc = r.per_label[j];
            if (p && g) ++lc.tp, ++r.counts.tp, ++inter;
            else if (p) ++lc.fp, ++r.counts.fp;
            else if (g) ++lc.fn, ++r.counts.fn;
            else ++r.counts.tn;
        }
        exact += preds[i] == golds[i] ? 1 : 0;
        const std::size_t uni = preds[i].size() + golds[i].size() - inter;
        jaccard += uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
    }
    r.accuracy = static_cast<double>(exact) / static_cast<double>(r.n_items);
    r.jaccard_accuracy = jaccard / static_cast<double>(r.n_items);
    fill_prf(r);
    return r;
}

MetricsReport multilabel_metrics(const std::vector<std::set<std::string>>& preds,
                                 const std::vector<std::set<std::string>>& golds, TaskKind task) {
    auto to_index = [task](const std::vector<std::set<std::string>>& sets) {
        std::vector<std::set<std::size_t>> out;
        for (const auto& s : sets) {
            std::set<std::size_t> idx;
            for (const auto& name : s) {
                auto j = task_label_index(task, name);
                if (!j) throw Error(Errc::UnknownLabelName, "'" + name + "' is not a label of " + std::string(task_name(task)));
                idx.insert(*j);
            }
            out.push_back(std::move(idx));
        }
        return out;
    };
    return multilabel_metrics(to_index(preds), to_index(golds), task);
}

std::string format_metric(double value) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3f", value);
    std::string s = buf;
    if (s.rfind("0.", 0) == 0) s.erase(0, 1);
    return s;
}

json report_to_json(const MetricsReport& r) {
    json metrics{{"accuracy", r.accuracy}, {"precision", r.precision}, {"recall", r.recall}, {"f1", r.f1}};
    if (r.jaccard_accuracy) metrics["jaccard_accuracy"] = *r.jaccard_accuracy;
    json counts{{"tp", r.counts.tp}, {"fp", r.counts.fp}, {"tn", r.counts.tn}, {"fn", r.counts.fn}};
    if (!r.per_label.empty()) {
        json per = json::array();
        for (const auto& lc : r.per_label) per.push_back({{"label", lc.label}, {"tp", lc.tp}, {"fp", lc.fp}, {"fn", lc.fn}});
        counts["per_label"] = per;
    }
    return json{{"task", task_name(r.task)},
                {"metrics", metrics},
                {"counts", counts},
                {"flags",
                 {{"precision_undefined", r.flags.precision_undefined},
                  {"recall_undefined", r.flags.recall_undefined},
                  {"f1_undefined", r.flags.f1_undefined}}},
                {"n_items", r.n_items},
                {"config_hash", r.config_hash}};
}

MetricsReport report_from_json(const json& j) {
    try {
        MetricsReport r;
        r.task = task_from_name(j.at("task").get<std::string>());
        const auto& m = j.at("metrics");
        r.accuracy = m.at("accuracy").get<double>();
        r.precision = m.at("precision").get<double>();
        r.recall = m.at("recall").get<double>();
        r.f1 = m.at("f1").get<double>();
        if (m.contains("jaccard_accuracy")) r.jaccard_accuracy = m["jaccard_accuracy"].get<double>();
        const auto& c = j.at("counts");
        r.counts = {c.at("tp").get<std::size_t>(), c.at("fp").get<std::size_t>(), c.at("tn").get<std::size_t>(),
                    c.at("fn").get<std::size_t>()};
        if (c.contains("per_label"))
            for (const auto& lc : c["per_label"])
                r.per_label.push_back({lc.at("label").get<std::string>(), lc.at("tp").get<std::size_t>(),
                                       lc.at("fp").get<std::size_t>(), lc.at("fn").get<std::size_t>()});
        const auto& f = j.at("flags");
        r.flags = {f.at("precision_undefined").get<bool>(), f.at("recall_undefined").get<bool>(),
                   f.at("f1_undefined").get<bool>()};
        r.n_items = j.at("n_items").get<std::size_t>();
        r.config_hash = j.value("config_hash", "");
        return r;
    } catch (const json::exception& e) {
        throw Error(Errc::MalformedRecord, std::string("metrics report: ") + e.what());
    }
}

std::string render_table(const MetricsReport& r) {
    std::ostringstream out;
    out << "task: " << task_name(r.task) << "   n = " << r.n_items;
    if (!r.config_hash.empty()) out << "   config " << r.config_hash;
    out << "\n\n";
    auto line = [&](const char* name, double value, bool undefined) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "  %-18s %6s%s\n", name, format_metric(value).c_str(), undefined ? " *" : "");
        out << buf;
    };
    line("accuracy", r.accuracy, false);
    if (r.jaccard_accuracy) line("jaccard accuracy", *r.jaccard_accuracy, false);
    line("precision", r.precision, r.flags.precision_undefined);
    line("recall", r.recall, r.flags.recall_undefined);
    line("f1 (micro)", r.f1, r.flags.f1_undefined);
    out << "\n  TP " << r.counts.tp << "  FP " << r.counts.fp << "  TN " << r.counts.tn << "  FN " << r.counts.fn << "\n";
    if (!r.per_label.empty()) {
        out << "\n";
        for (const auto& lc : r.per_label) {
            char buf[96];
            std::snprintf(buf, sizeof buf, "  %-26s TP %4zu  FP %4zu  FN %4zu\n", lc.label.c_str(), lc.tp, lc.fp, lc.fn);
            out << buf;
        }
    }
    if (r.flags.precision_undefined || r.flags.recall_undefined || r.flags.f1_undefined)
        out << "\n  * undefined→0: zero denominator, reported as 0\n";
    return out.str();
}

void emit_report(const MetricsReport& report, const std::filesystem::path& json_path) {
    auto write = [](const std::filesystem::path& p, const std::string& text) {
        std::ofstream out(p, std::ios::binary);
        out << text;
        if (!out) throw Error(Errc::IoFailure, "cannot write '" + p.string() + "'");
    };
    if (json_path.has_parent_path()) std::filesystem::create_directories(json_path.parent_path());
    write(json_path, report_to_json(report).dump(2) + "\n");
    auto table_path = json_path;
    table_path.replace_extension(".txt");
    write(table_path, render_table(report));
}

}  // namespace imm
