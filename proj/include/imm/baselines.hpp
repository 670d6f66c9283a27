#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "imm/augment.hpp"
#include "imm/chat_client.hpp"
#include "imm/corpus.hpp"

namespace imm {

enum class YesNo { Yes, No, Abstain };

std::string_view yes_no_name(YesNo v) noexcept;

// First whole-word hit from {yes, yeah, yep} or {no, nope}, ignoring case.
YesNo parse_yes_no(std::string_view reply);

// An abstention never matches the gold label.
inline bool is_correct(YesNo answer, bool gold) {
    return answer != YesNo::Abstain && (answer == YesNo::Yes) == gold;
}

struct BaselineOptions {
    SamplingParams sampling{0.0, 16, std::uint64_t{0}};
    RetryPolicy retry{};
    std::string think_delimiter = std::string(kDefaultThinkDelimiter);
};

struct BaselineAnswer {
    YesNo answer = YesNo::Abstain;
    std::string raw_text;
};

std::string build_zero_shot_prompt(const Conversation& conv);

// Sends `prompt`, retrying BackendError per opts.retry, and parses the reply.
BaselineAnswer ask_yes_no(ChatModelClient& client, const std::string& prompt, const BaselineOptions& opts = {});

BaselineAnswer zero_shot_classify(ChatModelClient& client, const Conversation& conv, const BaselineOptions& opts = {});

struct FewShotPrompt {
    std::string text;
    std::vector<std::string> exemplar_ids;
    std::vector<bool> exemplar_labels;
};

// Two positives and two negatives drawn without replacement from `pool`
// (excluding any entry whose id equals the query's), presented in shuffled order.
// Throws InsufficientPool.
FewShotPrompt build_few_shot_prompt(const Conversation& query, const std::vector<Conversation>& pool, std::uint64_t seed);

struct FewShotAnswer {
    BaselineAnswer answer;
    std::vector<std::string> exemplar_ids;
};

FewShotAnswer few_shot_classify(ChatModelClient& client, const Conversation& conv, const std::vector<Conversation>& pool,
                                std::uint64_t seed, const BaselineOptions& opts = {});

// Runs `task(i)` for i in [0, n) on up to client.max_concurrency() threads.
// Results land at their index, so output order never depends on scheduling.
template <class R>
std::vector<R> run_bounded(const ChatModelClient& client, std::size_t n, const std::function<R(std::size_t)>& task);

}  // namespace imm

#include "imm/detail/run_bounded.hpp"
