#pragma once

#include <cstdint>
#include <filesystem>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace imm {

struct SamplingParams {
    double temperature = 0.6;
    int max_new_tokens = 2048;
    std::optional<std::uint64_t> seed;
};

// A text-completion backend. Implementations keep no conversation state between
// calls; everything the model sees is in `prompt`. Backends that cannot serve
// concurrent calls report max_concurrency() == 1 and callers honor it.
class ChatModelClient {
public:
    virtual ~ChatModelClient() = default;
    // Throws Error(BackendError) on transport or server failure.
    virtual std::string complete(const std::string& prompt, const SamplingParams& sampling) = 0;
    virtual std::string identity() const = 0;
    virtual std::size_t max_concurrency() const { return 1; }
};

// Replays canned replies; used by tests and the CLI's --mock-client flag.
//
// File format (JSON):
//   {"model": "scripted", "max_concurrency": 4,
//    "rules": [{"match": "substring", "replies": ["..."], "fail_first": 0}]}
// The first rule whose `match` occurs in the prompt answers (an empty match
// answers everything). With a seed the reply is replies[seed % n]; without one
// the rule's own call counter picks it. The first `fail_first` calls to a rule
// throw BackendError.
class ScriptedClient final : public ChatModelClient {
public:
    struct Rule {
        std::string match;
        std::vector<std::string> replies;
        int fail_first = 0;
    };

    explicit ScriptedClient(std::vector<Rule> rules, std::string model = "scripted", std::size_t max_concurrency = 1);
    static ScriptedClient from_json(const nlohmann::json& j);
    static ScriptedClient from_file(const std::filesystem::path& path);

    std::string complete(const std::string& prompt, const SamplingParams& sampling) override;
    std::string identity() const override { return model_; }
    std::size_t max_concurrency() const override { return max_concurrency_; }

    std::size_t calls() const;

private:
    std::vector<Rule> rules_;
    std::string model_;
    std::size_t max_concurrency_;
    mutable std::mutex mu_;
    std::vector<std::size_t> rule_calls_;
    std::size_t total_calls_ = 0;
};

struct HttpClientConfig {
    std::string base_url;                      // scheme://host[:port]
    std::string path = "/v1/chat/completions";
    std::string model;
    std::string api_key_env;                   // name of the variable holding the bearer token
    int timeout_seconds = 600;
    std::size_t max_concurrency = 4;
};

// OpenAI-compatible chat-completions endpoint (vLLM, llama.cpp server, hosted APIs).
class HttpChatClient final : public ChatModelClient {
public:
    explicit HttpChatClient(HttpClientConfig config);

    std::string complete(const std::string& prompt, const SamplingParams& sampling) override;
    std::string identity() const override { return config_.model; }
    std::size_t max_concurrency() const override { return config_.max_concurrency; }

    static nlohmann::json request_body(const std::string& model, const std::string& prompt, const SamplingParams& sampling);
    static std::string extract_reply(const std::string& response_body);

private:
    HttpClientConfig config_;
    std::string api_key_;
};

}  // namespace imm
