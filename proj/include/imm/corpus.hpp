#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "imm/labels.hpp"

namespace imm {

enum class Speaker { Person1, Person2 };

std::string_view speaker_name(Speaker s) noexcept;

struct Turn {
    int index = 0;  // 1-based
    Speaker speaker = Speaker::Person1;
    std::string text;
};

struct Conversation {
    std::string id;
    std::vector<Turn> turns;
    std::optional<bool> binary_label;
    TechniqueSet techniques;
    VulnerabilitySet vulnerabilities;

    std::size_t turn_count() const noexcept { return turns.size(); }
};

// Throws Error(MalformedRecord) when turn indices, texts, or label combinations
// violate the conversation invariants.
void validate(const Conversation& conv);

// Set of 1-based line indices flagged in a conversation.
class LineLabelSet {
public:
    LineLabelSet() = default;
    LineLabelSet(std::initializer_list<int> lines) : lines_(lines) {}
    explicit LineLabelSet(std::set<int> lines) : lines_(std::move(lines)) {}

    const std::set<int>& lines() const noexcept { return lines_; }
    bool empty() const noexcept { return lines_.empty(); }
    std::size_t size() const noexcept { return lines_.size(); }
    bool contains(int k) const { return lines_.contains(k); }
    void insert(int k) { lines_.insert(k); }

    // "Line_1, Line_3, Line_5"; the empty set serializes to "None".
    std::string serialize() const;
    bool fits(const Conversation& conv) const;

    friend bool operator==(const LineLabelSet&, const LineLabelSet&) = default;

private:
    std::set<int> lines_;
};

inline constexpr std::string_view kNoLinesToken = "None";

// One turn per non-blank line of "Person1: ..." / "Person2: ..." text.
Conversation parse_dialogue(std::string_view raw, std::string id);

// "Line_k: Speaker: text" per turn, newline-joined, no trailing newline.
std::string format_with_lines(const Conversation& conv);

// "Speaker: text" per turn, newline-joined; inverse of parse_dialogue.
std::string format_plain(const Conversation& conv);

enum class DatasetSchema { Csv, Jsonl };

DatasetSchema schema_from_path(const std::filesystem::path& path);
std::vector<Conversation> load_dataset(const std::filesystem::path& path, DatasetSchema schema);
std::vector<Conversation> parse_csv_dataset(std::string_view content);
std::vector<Conversation> parse_jsonl_dataset(std::string_view content);

nlohmann::json conversation_to_json(const Conversation& conv);
Conversation conversation_from_json(const nlohmann::json& j);
std::string to_jsonl(const std::vector<Conversation>& data);
void save_jsonl(const std::filesystem::path& path, const std::vector<Conversation>& data);

struct SplitRatios {
    double train = 0.8;
    double val = 0.1;
    double test = 0.1;
};

struct DatasetSplit {
    std::vector<Conversation> train;
    std::vector<Conversation> val;
    std::vector<Conversation> test;
};

// Seeded, exhaustive, disjoint split stratified on binary_label.
DatasetSplit split_dataset(const std::vector<Conversation>& data, SplitRatios ratios, std::uint64_t seed);

}  // namespace imm
