#include "imm/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "imm/error.hpp"
#include "imm/rng.hpp"

namespace imm {

using nlohmann::json;

std::string_view speaker_name(Speaker s) noexcept { return s == Speaker::Person1 ? "Person1" : "Person2"; }

namespace {

std::optional<Speaker> speaker_from_name(std::string_view s) {
    if (s == "Person1") return Speaker::Person1;
    if (s == "Person2") return Speaker::Person2;
    return std::nullopt;
}

std::string_view trim(std::string_view s) {
    const auto ws = " \t\r";
    const auto b = s.find_first_not_of(ws);
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(ws);
    return s.substr(b, e - b + 1);
}

std::vector<std::string_view> split_lines(std::string_view raw) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (start <= raw.size()) {
        auto nl = raw.find('\n', start);
        if (nl == std::string_view::npos) nl = raw.size();
        auto line = raw.substr(start, nl - start);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        out.push_back(line);
        start = nl + 1;
    }
    return out;
}

}  // namespace

void validate(const Conversation& conv) {
    if (conv.turns.empty()) throw Error(Errc::MalformedRecord, "conversation '" + conv.id + "' has no turns");
    for (std::size_t i = 0; i < conv.turns.size(); ++i) {
        const auto& t = conv.turns[i];
        if (t.index != static_cast<int>(i) + 1)
            throw Error(Errc::MalformedRecord, "conversation '" + conv.id + "': turn indices must run 1..n");
        if (t.text.empty() || t.text.find('\n') != std::string::npos)
            throw Error(Errc::MalformedRecord,
                        "conversation '" + conv.id + "': turn " + std::to_string(t.index) +
                            " text must be non-empty and single-line");
    }
    if (conv.binary_label == false && (!conv.techniques.empty() || !conv.vulnerabilities.empty()))
        throw Error(Errc::MalformedRecord,
                    "conversation '" + conv.id + "' is labeled non-manipulative but carries technique/vulnerability labels");
}

std::string LineLabelSet::serialize() const {
    if (lines_.empty()) return std::string(kNoLinesToken);
    std::string out;
    for (int k : lines_) {
        if (!out.empty()) out += ", ";
        out += "Line_" + std::to_string(k);
    }
    return out;
}

bool LineLabelSet::fits(const Conversation& conv) const {
    return std::all_of(lines_.begin(), lines_.end(),
                       [&](int k) { return k >= 1 && static_cast<std::size_t>(k) <= conv.turn_count(); });
}

Conversation parse_dialogue(std::string_view raw, std::string id) {
    Conversation conv;
    conv.id = std::move(id);
    const auto lines = split_lines(raw);
    for (std::size_t n = 0; n < lines.size(); ++n) {
        auto line = trim(lines[n]);
        if (line.empty()) continue;
        const auto colon = line.find(':');
        const auto speaker = colon == std::string_view::npos ? std::nullopt : speaker_from_name(line.substr(0, colon));
        if (!speaker)
            throw Error(Errc::MalformedLine,
                        "line " + std::to_string(n + 1) + " lacks a 'Person1:' or 'Person2:' prefix");
        auto text = line.substr(colon + 1);
        if (!text.empty() && text.front() == ' ') text.remove_prefix(1);
        if (text.empty())
            throw Error(Errc::MalformedLine, "line " + std::to_string(n + 1) + " has no text after the speaker");
        conv.turns.push_back(Turn{static_cast<int>(conv.turns.size()) + 1, *speaker, std::string(text)});
    }
    if (conv.turns.empty()) throw Error(Errc::EmptyDialogue, "dialogue '" + conv.id + "' contains no turns");
    return conv;
}

std::string format_with_lines(const Conversation& conv) {
    std::string out;
    for (const auto& t : conv.turns) {
        if (!out.empty()) out += '\n';
        out += "Line_" + std::to_string(t.index) + ": ";
        out += speaker_name(t.speaker);
        out += ": " + t.text;
    }
    return out;
}

std::string format_plain(const Conversation& conv) {
    std::string out;
    for (const auto& t : conv.turns) {
        if (!out.empty()) out += '\n';
        out += speaker_name(t.speaker);
        out += ": " + t.text;
    }
    return out;
}

DatasetSchema schema_from_path(const std::filesystem::path& path) {
    const auto ext = path.extension().string();
    if (ext == ".csv") return DatasetSchema::Csv;
    if (ext == ".jsonl" || ext == ".json") return DatasetSchema::Jsonl;
    throw Error(Errc::InvalidArgument, "cannot infer dataset schema from '" + path.string() + "'");
}

namespace {

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(Errc::IoFailure, "cannot open '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// RFC 4180 reader: quoted fields may span lines, "" escapes a quote.
std::vector<std::vector<std::string>> parse_csv_rows(std::string_view content) {
    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> row;
    std::string field;
    bool quoted = false;
    bool field_started = false;
    auto end_field = [&] {
        row.push_back(std::move(field));
        field.clear();
        field_started = false;
    };
    auto end_row = [&] {
        end_field();
        if (!(row.size() == 1 && row[0].empty())) rows.push_back(std::move(row));
        row.clear();
    };
    for (std::size_t i = 0; i < content.size(); ++i) {
        const char c = content[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < content.size() && content[i + 1] == '"') {
                    field += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                field += c;
            }
            continue;
        }
        if (c == '"' && !field_started) {
            quoted = true;
            field_started = true;
        } else if (c == ',') {
            end_field();
        } else if (c == '\n') {
            end_row();
        } else if (c == '\r') {
            if (i + 1 >= content.size() || content[i + 1] != '\n') end_row();
        } else {
            field += c;
            field_started = true;
        }
    }
    if (quoted) throw Error(Errc::MalformedRecord, "unterminated quoted CSV field");
    if (!field.empty() || !row.empty()) end_row();
    return rows;
}

std::vector<std::string> split_label_list(std::string_view s) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (start <= s.size()) {
        auto comma = s.find(',', start);
        if (comma == std::string_view::npos) comma = s.size();
        auto item = trim(s.substr(start, comma - start));
        if (!item.empty()) out.emplace_back(item);
        start = comma + 1;
    }
    return out;
}

template <class Fn>
auto with_record(std::size_t record, Fn&& fn) {
    try {
        return fn();
    } catch (const Error& e) {
        const auto where = "record " + std::to_string(record) + ": ";
        if (e.code() == Errc::UnknownLabelName) throw Error(Errc::UnknownLabelName, where + e.what());
        throw Error(Errc::MalformedRecord, where + e.what());
    }
}

void add_techniques(Conversation& conv, const std::vector<std::string>& names) {
    for (const auto& n : names) {
        auto t = technique_from_name(n);
        if (!t) throw Error(Errc::UnknownLabelName, "unknown technique '" + n + "'");
        conv.techniques.insert(*t);
    }
}

void add_vulnerabilities(Conversation& conv, const std::vector<std::string>& names) {
    for (const auto& n : names) {
        auto v = vulnerability_from_name(n);
        if (!v) throw Error(Errc::UnknownLabelName, "unknown vulnerability '" + n + "'");
        conv.vulnerabilities.insert(*v);
    }
}

std::string unescape_newlines(std::string dialogue) {
    if (dialogue.find('\n') != std::string::npos) return dialogue;
    std::string out;
    for (std::size_t i = 0; i < dialogue.size(); ++i) {
        if (dialogue[i] == '\\' && i + 1 < dialogue.size() && dialogue[i + 1] == 'n') {
            out += '\n';
            ++i;
        } else {
            out += dialogue[i];
        }
    }
    return out;
}

}  // namespace

std::vector<Conversation> parse_csv_dataset(std::string_view content) {
    const auto rows = parse_csv_rows(content);
    if (rows.empty()) return {};
    std::map<std::string, std::size_t> col;
    for (std::size_t i = 0; i < rows[0].size(); ++i) col[std::string(trim(rows[0][i]))] = i;
    if (!col.contains("dialogue")) throw Error(Errc::MalformedRecord, "CSV header lacks a 'dialogue' column");

    std::vector<Conversation> out;
    for (std::size_t r = 1; r < rows.size(); ++r) {
        const auto& row = rows[r];
        auto cell = [&](const std::string& name) -> std::optional<std::string> {
            auto it = col.find(name);
            if (it == col.end() || it->second >= row.size()) return std::nullopt;
            return row[it->second];
        };
        out.push_back(with_record(r, [&] {
            if (row.size() != rows[0].size())
                throw Error(Errc::MalformedRecord, "expected " + std::to_string(rows[0].size()) + " fields, got " +
                                                       std::to_string(row.size()));
            const auto id = cell("id").value_or(std::to_string(r));
            auto conv = parse_dialogue(unescape_newlines(*cell("dialogue")), id);
            if (auto m = cell("manipulative"); m && !trim(*m).empty()) {
                const auto v = trim(*m);
                if (v == "1") conv.binary_label = true;
                else if (v == "0") conv.binary_label = false;
                else throw Error(Errc::MalformedRecord, "manipulative must be 0 or 1, got '" + std::string(v) + "'");
            }
            if (auto t = cell("techniques")) add_techniques(conv, split_label_list(*t));
            if (auto v = cell("vulnerabilities")) add_vulnerabilities(conv, split_label_list(*v));
            validate(conv);
            return conv;
        }));
    }
    return out;
}

nlohmann::json conversation_to_json(const Conversation& conv) {
    json turns = json::array();
    for (const auto& t : conv.turns) turns.push_back({{"speaker", speaker_name(t.speaker)}, {"text", t.text}});
    json labels = json::object();
    if (conv.binary_label) labels["manipulative"] = *conv.binary_label;
    if (!conv.techniques.empty()) {
        json arr = json::array();
        for (auto t : conv.techniques) arr.push_back(display_name(t));
        labels["techniques"] = arr;
    }
    if (!conv.vulnerabilities.empty()) {
        json arr = json::array();
        for (auto v : conv.vulnerabilities) arr.push_back(display_name(v));
        labels["vulnerabilities"] = arr;
    }
    return json{{"id", conv.id}, {"turns", turns}, {"labels", labels}};
}

Conversation conversation_from_json(const nlohmann::json& j) {
    if (!j.is_object() || !j.contains("turns") || !j["turns"].is_array())
        throw Error(Errc::MalformedRecord, "object lacks a 'turns' array");
    Conversation conv;
    if (j.contains("id")) conv.id = j["id"].is_string() ? j["id"].get<std::string>() : j["id"].dump();
    for (const auto& t : j["turns"]) {
        if (!t.is_object() || !t.contains("speaker") || !t.contains("text") || !t["speaker"].is_string() ||
            !t["text"].is_string())
            throw Error(Errc::MalformedRecord, "turn must be {speaker, text}");
        auto speaker = speaker_from_name(t["speaker"].get<std::string>());
        if (!speaker) throw Error(Errc::MalformedRecord, "unknown speaker '" + t["speaker"].get<std::string>() + "'");
        conv.turns.push_back(Turn{static_cast<int>(conv.turns.size()) + 1, *speaker, t["text"].get<std::string>()});
    }
    if (j.contains("labels") && !j["labels"].is_null()) {
        const auto& labels = j["labels"];
        if (!labels.is_object()) throw Error(Errc::MalformedRecord, "'labels' must be an object");
        if (labels.contains("manipulative") && !labels["manipulative"].is_null()) {
            const auto& m = labels["manipulative"];
            if (m.is_boolean()) conv.binary_label = m.get<bool>();
            else if (m.is_number_integer() && (m.get<int>() == 0 || m.get<int>() == 1)) conv.binary_label = m.get<int>() == 1;
            else throw Error(Errc::MalformedRecord, "'manipulative' must be a boolean or 0/1");
        }
        auto names = [&](const char* key) {
            std::vector<std::string> out;
            if (!labels.contains(key)) return out;
            if (!labels[key].is_array()) throw Error(Errc::MalformedRecord, std::string("'") + key + "' must be an array");
            for (const auto& n : labels[key]) {
                if (!n.is_string()) throw Error(Errc::MalformedRecord, std::string("'") + key + "' entries must be strings");
                out.push_back(n.get<std::string>());
            }
            return out;
        };
        add_techniques(conv, names("techniques"));
        add_vulnerabilities(conv, names("vulnerabilities"));
    }
    validate(conv);
    return conv;
}

std::vector<Conversation> parse_jsonl_dataset(std::string_view content) {
    std::vector<Conversation> out;
    std::size_t record = 0;
    for (auto line : split_lines(content)) {
        if (trim(line).empty()) continue;
        ++record;
        out.push_back(with_record(record, [&] {
            json j = json::parse(line, nullptr, false);
            if (j.is_discarded()) throw Error(Errc::MalformedRecord, "invalid JSON");
            return conversation_from_json(j);
        }));
    }
    return out;
}

std::vector<Conversation> load_dataset(const std::filesystem::path& path, DatasetSchema schema) {
    const auto content = read_file(path);
    return schema == DatasetSchema::Csv ? parse_csv_dataset(content) : parse_jsonl_dataset(content);
}

std::string to_jsonl(const std::vector<Conversation>& data) {
    std::string out;
    for (const auto& c : data) out += conversation_to_json(c).dump() + "\n";
    return out;
}

void save_jsonl(const std::filesystem::path& path, const std::vector<Conversation>& data) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(Errc::IoFailure, "cannot write '" + path.string() + "'");
    out << to_jsonl(data);
    if (!out) throw Error(Errc::IoFailure, "write failed for '" + path.string() + "'");
}

namespace {

// Largest-remainder apportionment of n items over the three ratios.
std::array<std::size_t, 3> apportion(std::size_t n, const SplitRatios& r) {
    const std::array<double, 3> quota{n * r.train, n * r.val, n * r.test};
    std::array<std::size_t, 3> sizes{};
    std::size_t assigned = 0;
    for (int i = 0; i < 3; ++i) {
        sizes[i] = static_cast<std::size_t>(std::floor(quota[i]));
        assigned += sizes[i];
    }
    std::array<int, 3> order{0, 1, 2};
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return quota[a] - std::floor(quota[a]) > quota[b] - std::floor(quota[b]);
    });
    for (int i = 0; assigned < n; ++i, ++assigned) ++sizes[order[i % 3]];
    return sizes;
}

}  // namespace

DatasetSplit split_dataset(const std::vector<Conversation>& data, SplitRatios ratios, std::uint64_t seed) {
    if (!(ratios.train > 0 && ratios.val >= 0 && ratios.test >= 0) ||
        std::abs(ratios.train + ratios.val + ratios.test - 1.0) > 1e-9)
        throw Error(Errc::InvalidRatios, "split ratios must be non-negative, with train > 0, and sum to 1");

    // Strata: positives, negatives, unlabeled. Each is shuffled, then the strata are
    // interleaved by relative rank so every prefix of the merged order is stratified.
    std::array<std::vector<std::size_t>, 3> strata;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto& lbl = data[i].binary_label;
        strata[lbl ? (*lbl ? 0 : 1) : 2].push_back(i);
    }
    Rng rng(seed);
    struct Keyed {
        double key;
        int stratum;
        std::size_t index;
    };
    std::vector<Keyed> merged;
    for (int s = 0; s < 3; ++s) {
        rng.shuffle(strata[s]);
        const double n = static_cast<double>(strata[s].size());
        for (std::size_t r = 0; r < strata[s].size(); ++r)
            merged.push_back({(static_cast<double>(r) + 0.5) / n, s, strata[s][r]});
    }
    std::stable_sort(merged.begin(), merged.end(), [](const Keyed& a, const Keyed& b) {
        return a.key != b.key ? a.key < b.key : a.stratum < b.stratum;
    });

    const auto sizes = apportion(data.size(), ratios);
    DatasetSplit out;
    for (std::size_t i = 0; i < merged.size(); ++i) {
        auto& bucket = i < sizes[0] ? out.train : (i < sizes[0] + sizes[1] ? out.val : out.test);
        bucket.push_back(data[merged[i].index]);
    }
    return out;
}

}  // namespace imm
