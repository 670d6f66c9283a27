#include "imm/chat_client.hpp"

#include <cstdlib>
#include <fstream>

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include "imm/error.hpp"

namespace imm {

using nlohmann::json;

ScriptedClient::ScriptedClient(std::vector<Rule> rules, std::string model, std::size_t max_concurrency)
    : rules_(std::move(rules)), model_(std::move(model)), max_concurrency_(max_concurrency == 0 ? 1 : max_concurrency),
      rule_calls_(rules_.size(), 0) {
    for (const auto& r : rules_)
        if (r.replies.empty()) throw Error(Errc::ConfigError, "scripted rule '" + r.match + "' has no replies");
}

ScriptedClient ScriptedClient::from_json(const json& j) {
    if (!j.is_object() || !j.contains("rules") || !j["rules"].is_array())
        throw Error(Errc::ConfigError, "scripted client file needs a 'rules' array");
    std::vector<Rule> rules;
    for (const auto& r : j["rules"]) {
        Rule rule;
        rule.match = r.value("match", "");
        rule.fail_first = r.value("fail_first", 0);
        if (!r.contains("replies") || !r["replies"].is_array())
            throw Error(Errc::ConfigError, "scripted rule needs a 'replies' array");
        for (const auto& reply : r["replies"]) rule.replies.push_back(reply.get<std::string>());
        rules.push_back(std::move(rule));
    }
    return ScriptedClient(std::move(rules), j.value("model", "scripted"), j.value("max_concurrency", std::size_t{1}));
}

ScriptedClient ScriptedClient::from_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(Errc::IoFailure, "cannot open scripted client file '" + path.string() + "'");
    json j = json::parse(in, nullptr, false);
    if (j.is_discarded()) throw Error(Errc::ConfigError, "scripted client file '" + path.string() + "' is not valid JSON");
    return from_json(j);
}

std::string ScriptedClient::complete(const std::string& prompt, const SamplingParams& sampling) {
    std::lock_guard lock(mu_);
    ++total_calls_;
    for (std::size_t i = 0; i < rules_.size(); ++i) {
        const auto& rule = rules_[i];
        if (!rule.match.empty() && prompt.find(rule.match) == std::string::npos) continue;
        const std::size_t call = rule_calls_[i]++;
        if (call < static_cast<std::size_t>(rule.fail_first))
            throw Error(Errc::BackendError, "scripted failure " + std::to_string(call + 1));
        const std::size_t n = rule.replies.size();
        const std::size_t pick = sampling.seed ? static_cast<std::size_t>(*sampling.seed % n) : call % n;
        return rule.replies[pick];
    }
    throw Error(Errc::BackendError, "no scripted reply matches the prompt");
}

std::size_t ScriptedClient::calls() const {
    std::lock_guard lock(mu_);
    return total_calls_;
}

HttpChatClient::HttpChatClient(HttpClientConfig config) : config_(std::move(config)) {
    if (config_.base_url.empty()) throw Error(Errc::ConfigError, "http client needs a base_url");
    if (config_.max_concurrency == 0) config_.max_concurrency = 1;
    if (!config_.api_key_env.empty()) {
        if (const char* key = std::getenv(config_.api_key_env.c_str())) api_key_ = key;
    }
}

json HttpChatClient::request_body(const std::string& model, const std::string& prompt, const SamplingParams& sampling) {
    json body{{"model", model},
              {"messages", json::array({json{{"role", "user"}, {"content", prompt}}})},
              {"temperature", sampling.temperature},
              {"max_tokens", sampling.max_new_tokens}};
    if (sampling.seed) body["seed"] = *sampling.seed;
    return body;
}

std::string HttpChatClient::extract_reply(const std::string& response_body) {
    json j = json::parse(response_body, nullptr, false);
    if (j.is_discarded()) throw Error(Errc::BackendError, "response is not JSON");
    try {
        const auto& message = j.at("choices").at(0).at("message");
        std::string content = message.at("content").is_null() ? "" : message.at("content").get<std::string>();
        // Some servers return the reasoning trace separately; keep it in front of the
        // answer so the think-delimiter stripping downstream sees the usual shape.
        if (message.contains("reasoning_content") && message["reasoning_content"].is_string())
            content = "<think>" + message["reasoning_content"].get<std::string>() + "</think>" + content;
        return content;
    } catch (const json::exception& e) {
        throw Error(Errc::BackendError, std::string("unexpected response shape: ") + e.what());
    }
}

std::string HttpChatClient::complete(const std::string& prompt, const SamplingParams& sampling) {
    httplib::Client cli(config_.base_url);
    cli.set_read_timeout(config_.timeout_seconds, 0);
    cli.set_write_timeout(config_.timeout_seconds, 0);
    httplib::Headers headers;
    if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);
    const auto body = request_body(config_.model, prompt, sampling).dump();
    auto res = cli.Post(config_.path, headers, body, "application/json");
    if (!res) throw Error(Errc::BackendError, "request failed: " + httplib::to_string(res.error()));
    if (res->status != 200)
        throw Error(Errc::BackendError, "HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 200));
    return extract_reply(res->body);
}

}  // namespace imm
