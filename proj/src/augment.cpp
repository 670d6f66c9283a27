#include "imm/augment.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <fstream>
#include <map>
#include <thread>

#include "imm/error.hpp"
#include "imm/templates.hpp"

namespace imm {

using nlohmann::json;

std::string_view strip_thinking(std::string_view raw, std::string_view delimiter) {
    if (delimiter.empty()) return raw;
    const auto pos = raw.rfind(delimiter);
    return pos == std::string_view::npos ? raw : raw.substr(pos + delimiter.size());
}

LineParse parse_line_response(std::string_view raw, int max_line) {
    if (max_line < 1) throw Error(Errc::InvalidArgument, "max_line must be >= 1");
    std::set<int> found;
    std::vector<std::string> warnings;
    bool matched = false;
    auto lower = [](char c) { return static_cast<char>(std::tolower(static_cast<unsigned char>(c))); };
    for (std::size_t i = 0; i + 5 < raw.size(); ++i) {
        if (lower(raw[i]) != 'l' || lower(raw[i + 1]) != 'i' || lower(raw[i + 2]) != 'n' || lower(raw[i + 3]) != 'e' ||
            raw[i + 4] != '_')
            continue;
        if (i > 0 && std::isalnum(static_cast<unsigned char>(raw[i - 1]))) continue;
        std::size_t j = i + 5;
        long long value = 0;
        bool overflow = false;
        while (j < raw.size() && std::isdigit(static_cast<unsigned char>(raw[j]))) {
            value = value * 10 + (raw[j] - '0');
            if (value > 1'000'000'000) overflow = true;
            ++j;
        }
        if (j == i + 5) continue;
        matched = true;
        if (overflow || value < 1 || value > max_line) {
            warnings.push_back("line reference " + std::string(raw.substr(i, j - i)) + " is outside 1.." +
                               std::to_string(max_line));
        } else {
            found.insert(static_cast<int>(value));
        }
        i = j - 1;
    }
    LineParse out;
    out.warnings = std::move(warnings);
    if (matched) out.lines = LineLabelSet(std::move(found));
    return out;
}

std::string build_thinking_prompt(const Conversation& conv) {
    return format_with_lines(conv) + "\n\n" + std::string(templates::thinking_prompt());
}

std::vector<InferenceRecord> sample_runs(ChatModelClient& client, const Conversation& conv, const SampleOptions& opts) {
    if (opts.n < 1) throw Error(Errc::InvalidArgument, "sample_runs needs n >= 1");
    const std::string prompt = build_thinking_prompt(conv);
    const int max_line = static_cast<int>(conv.turn_count());
    const std::uint64_t base_seed = opts.sampling.seed.value_or(0);
    std::vector<InferenceRecord> records(static_cast<std::size_t>(opts.n));

    auto run_one = [&](int run_index) {
        SamplingParams sampling = opts.sampling;
        sampling.seed = base_seed + static_cast<std::uint64_t>(run_index - 1);
        InferenceRecord rec;
        rec.run_index = run_index;
        auto backoff = opts.retry.base_backoff;
        for (int attempt = 0;; ++attempt) {
            try {
                rec.raw_text = client.complete(prompt, sampling);
                rec.error.reset();
                break;
            } catch (const Error& e) {
                if (e.code() != Errc::BackendError) throw;
                rec.error = e.what();
                if (attempt >= opts.retry.retry_limit) break;
                if (backoff.count() > 0) std::this_thread::sleep_for(backoff);
                backoff *= 2;
            }
        }
        if (!rec.error) rec.parsed = parse_line_response(strip_thinking(rec.raw_text, opts.think_delimiter), max_line);
        records[static_cast<std::size_t>(run_index - 1)] = std::move(rec);
    };

    const std::size_t workers = std::min<std::size_t>(std::max<std::size_t>(client.max_concurrency(), 1), records.size());
    if (workers == 1) {
        for (int k = 1; k <= opts.n; ++k) run_one(k);
        return records;
    }
    std::atomic<int> next{1};
    std::exception_ptr failure;
    std::mutex failure_mu;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (int k = next++; k <= opts.n; k = next++) {
                try {
                    run_one(k);
                } catch (...) {
                    std::lock_guard lock(failure_mu);
                    if (!failure) failure = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
    return records;
}

LineLabelSet aggregate_majority(std::span<const InferenceRecord> records, double threshold) {
    std::map<int, std::size_t> counts;
    std::size_t valid = 0;
    for (const auto& r : records) {
        if (!r.parsed.ok()) continue;
        ++valid;
        for (int k : r.parsed.lines->lines()) ++counts[k];
    }
    if (valid == 0) throw Error(Errc::NoValidRuns, "no run produced a parseable line list");
    LineLabelSet out;
    for (const auto& [line, count] : counts)
        if (static_cast<double>(count) > threshold * static_cast<double>(valid)) out.insert(line);
    return out;
}

std::string build_summary_prompt(std::span<const InferenceRecord> records, std::string_view think_delimiter) {
    std::string answers;
    for (const auto& r : records) {
        if (!answers.empty()) answers += '\n';
        std::string_view text = r.error ? std::string_view("(no answer)") : strip_thinking(r.raw_text, think_delimiter);
        const auto b = text.find_first_not_of(" \t\r\n");
        const auto e = text.find_last_not_of(" \t\r\n");
        text = b == std::string_view::npos ? std::string_view("(empty)") : text.substr(b, e - b + 1);
        answers += "Answer " + std::to_string(r.run_index) + ": " + std::string(text);
    }
    return templates::render(templates::summarize_prompt(),
                             {{"count", std::to_string(records.size())}, {"answers", answers}});
}

LineParse aggregate_llm(ChatModelClient& client, std::span<const InferenceRecord> records, int max_line,
                        std::string_view think_delimiter) {
    if (records.empty()) throw Error(Errc::InvalidArgument, "aggregate_llm needs at least one record");
    SamplingParams sampling;
    sampling.temperature = 0.0;
    sampling.max_new_tokens = 256;
    sampling.seed = 0;
    const auto reply = client.complete(build_summary_prompt(records, think_delimiter), sampling);
    return parse_line_response(strip_thinking(reply, think_delimiter), max_line);
}

Aggregator aggregator_from_name(std::string_view name) {
    if (name == "majority") return Aggregator::Majority;
    if (name == "llm") return Aggregator::Llm;
    throw Error(Errc::ConfigError, "unknown aggregator '" + std::string(name) + "'");
}

std::string AugmentedExample::prompt() const {
    return templates::render(instruction, {{"dialogue", formatted_dialogue}});
}

AugmentedExample make_example(const Conversation& conv, const LineLabelSet& lines) {
    return AugmentedExample{conv.id, format_with_lines(conv), std::string(templates::explain_prompt()),
                            lines.serialize()};
}

namespace {
double jaccard(const LineLabelSet& a, const LineLabelSet& b) {
    if (a.empty() && b.empty()) return 1.0;
    std::size_t inter = 0;
    for (int k : a.lines()) inter += b.contains(k) ? 1 : 0;
    return static_cast<double>(inter) / static_cast<double>(a.size() + b.size() - inter);
}
}  // namespace

AugmentResult augment_dataset(ChatModelClient& client, const std::vector<Conversation>& data, const AugmentOptions& opts) {
    AugmentResult result;
    double agreement_sum = 0.0, jaccard_sum = 0.0;
    std::size_t agreement_n = 0;
    for (const auto& conv : data)
        if (!conv.binary_label)
            throw Error(Errc::LabelMissing, "conversation '" + conv.id + "' has no binary label");

    for (const auto& conv : data) {
        if (!*conv.binary_label) {
            ++result.stats.non_manipulative;
            result.examples.push_back(make_example(conv, LineLabelSet{}));
            continue;
        }
        ++result.stats.manipulative;
        const auto records = sample_runs(client, conv, opts.sample);
        for (const auto& r : records) {
            ProvenanceRecord p{conv.id, r.run_index, r.raw_text, r.parsed.lines, r.parsed.warnings};
            if (r.error) p.warnings.push_back("backend: " + *r.error);
            result.provenance.push_back(std::move(p));
        }
        LineLabelSet consensus;
        try {
            consensus = aggregate_majority(records, opts.threshold);
        } catch (const Error& e) {
            if (e.code() != Errc::NoValidRuns) throw;
            result.skipped.push_back({conv.id, e.what()});
            continue;
        }
        if (opts.aggregator == Aggregator::Llm) {
            auto& summarizer = opts.summarizer ? *opts.summarizer : client;
            auto summary = aggregate_llm(summarizer, records, static_cast<int>(conv.turn_count()),
                                         opts.sample.think_delimiter);
            if (summary.ok()) consensus = *summary.lines;
            else ++result.stats.llm_fallbacks;
        }
        if (consensus.empty()) ++result.stats.empty_consensus;
        for (const auto& r : records) {
            if (!r.parsed.ok()) continue;
            agreement_sum += *r.parsed.lines == consensus ? 1.0 : 0.0;
            jaccard_sum += jaccard(*r.parsed.lines, consensus);
            ++agreement_n;
        }
        result.examples.push_back(make_example(conv, consensus));
    }
    if (agreement_n > 0) {
        result.stats.mean_exact_agreement = agreement_sum / static_cast<double>(agreement_n);
        result.stats.mean_jaccard = jaccard_sum / static_cast<double>(agreement_n);
    }
    return result;
}

json to_json(const AugmentedExample& ex) {
    return json{{"conversation_id", ex.conversation_id},
                {"dialogue", ex.formatted_dialogue},
                {"instruction", ex.instruction},
                {"target", ex.target}};
}

AugmentedExample augmented_from_json(const json& j) {
    try {
        return AugmentedExample{j.at("conversation_id").get<std::string>(), j.at("dialogue").get<std::string>(),
                                j.at("instruction").get<std::string>(), j.at("target").get<std::string>()};
    } catch (const json::exception& e) {
        throw Error(Errc::MalformedRecord, std::string("augmented example: ") + e.what());
    }
}

json to_json(const ProvenanceRecord& rec) {
    json parsed = rec.parsed ? json(rec.parsed->lines()) : json(nullptr);
    return json{{"conversation_id", rec.conversation_id},
                {"run_index", rec.run_index},
                {"raw_text", rec.raw_text},
                {"parsed", parsed},
                {"warnings", rec.warnings}};
}

std::vector<AugmentedExample> load_augmented(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(Errc::IoFailure, "cannot open '" + path.string() + "'");
    std::vector<AugmentedExample> out;
    std::string line;
    std::size_t record = 0;
    while (std::getline(in, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        ++record;
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded())
            throw Error(Errc::MalformedRecord, "record " + std::to_string(record) + ": invalid JSON");
        out.push_back(augmented_from_json(j));
    }
    return out;
}

}  // namespace imm
