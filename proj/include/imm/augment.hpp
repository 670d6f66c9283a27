#pragma once

#include <chrono>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "imm/chat_client.hpp"
#include "imm/corpus.hpp"

namespace imm {

// Result of reading line numbers out of model text. `lines` is empty when the
// text contained no Line_<k> reference (a parse failure, not an exception).
struct LineParse {
    std::optional<LineLabelSet> lines;
    std::vector<std::string> warnings;

    bool ok() const noexcept { return lines.has_value(); }
};

inline constexpr std::string_view kDefaultThinkDelimiter = "</think>";

// Drops everything up to and including the last occurrence of `delimiter`.
std::string_view strip_thinking(std::string_view raw, std::string_view delimiter = kDefaultThinkDelimiter);

// Collects every Line_<digits> ("line" matched case-insensitively). Indices outside
// 1..max_line are dropped with a warning.
LineParse parse_line_response(std::string_view raw, int max_line);

// Formatted dialogue, a blank line, then the line-identification instruction.
std::string build_thinking_prompt(const Conversation& conv);

struct InferenceRecord {
    int run_index = 0;  // 1-based
    std::string raw_text;
    LineParse parsed;
    std::optional<std::string> error;  // backend failure that exhausted retries
};

struct RetryPolicy {
    int retry_limit = 3;  // retries after the first attempt
    std::chrono::milliseconds base_backoff{500};
};

struct SampleOptions {
    int n = 10;
    SamplingParams sampling;
    RetryPolicy retry;
    std::string think_delimiter = std::string(kDefaultThinkDelimiter);
};

// Runs the thinking prompt `n` times. Run k is sent with seed base+k-1 (base = 0
// when the sampling seed is unset). Up to client.max_concurrency() runs are in
// flight at once; records come back ordered by run_index.
std::vector<InferenceRecord> sample_runs(ChatModelClient& client, const Conversation& conv, const SampleOptions& opts);

// Line k is kept iff it appears in strictly more than `threshold` of the
// successfully parsed records. Throws Error(NoValidRuns) when none parsed.
LineLabelSet aggregate_majority(std::span<const InferenceRecord> records, double threshold = 0.5);

std::string build_summary_prompt(std::span<const InferenceRecord> records,
                                 std::string_view think_delimiter = kDefaultThinkDelimiter);

// Asks a (non-reasoning) model to consolidate the runs and parses its reply.
LineParse aggregate_llm(ChatModelClient& client, std::span<const InferenceRecord> records, int max_line,
                        std::string_view think_delimiter = kDefaultThinkDelimiter);

enum class Aggregator { Majority, Llm };
Aggregator aggregator_from_name(std::string_view name);

struct AugmentOptions {
    SampleOptions sample;
    Aggregator aggregator = Aggregator::Majority;
    double threshold = 0.5;
    ChatModelClient* summarizer = nullptr;  // defaults to the sampling client
};

struct AugmentedExample {
    std::string conversation_id;
    std::string formatted_dialogue;
    std::string instruction;
    std::string target;  // "Line_1, Line_3" or "None"

    // Instruction with the dialogue substituted: the model-facing prompt.
    std::string prompt() const;
};

struct ProvenanceRecord {
    std::string conversation_id;
    int run_index = 0;
    std::string raw_text;
    std::optional<LineLabelSet> parsed;
    std::vector<std::string> warnings;
};

struct SkipReport {
    std::string conversation_id;
    std::string reason;
};

struct AugmentStats {
    std::size_t manipulative = 0;
    std::size_t non_manipulative = 0;
    std::size_t empty_consensus = 0;     // manipulative but no line reached the threshold
    std::size_t llm_fallbacks = 0;       // summarizer reply unparseable, majority used
    double mean_exact_agreement = 0.0;   // share of parsed runs equal to the aggregate
    double mean_jaccard = 0.0;           // mean Jaccard(run, aggregate) over parsed runs
};

struct AugmentResult {
    std::vector<AugmentedExample> examples;
    std::vector<ProvenanceRecord> provenance;
    std::vector<SkipReport> skipped;
    AugmentStats stats;
};

AugmentResult augment_dataset(ChatModelClient& client, const std::vector<Conversation>& data, const AugmentOptions& opts);

AugmentedExample make_example(const Conversation& conv, const LineLabelSet& lines);

nlohmann::json to_json(const AugmentedExample& ex);
AugmentedExample augmented_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ProvenanceRecord& rec);
std::vector<AugmentedExample> load_augmented(const std::filesystem::path& path);

}  // namespace imm
