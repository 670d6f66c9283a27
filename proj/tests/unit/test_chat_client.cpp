#include <doctest.h>

#include "imm/chat_client.hpp"
#include "test_util.hpp"

using namespace imm;
using imm::testing::error_code_of;

TEST_SUITE("chat_client") {

TEST_CASE("scripted rules pick replies by seed or call count") {
    ScriptedClient c({{"apple", {"A0", "A1"}, 0}, {"", {"D0", "D1", "D2"}, 0}});
    SamplingParams unseeded;
    unseeded.seed.reset();
    CHECK(c.complete("an apple", unseeded) == "A0");
    CHECK(c.complete("an apple", unseeded) == "A1");
    CHECK(c.complete("pear", unseeded) == "D0");
    SamplingParams seeded;
    seeded.seed = 5;
    CHECK(c.complete("pear", seeded) == "D2");
    CHECK(c.calls() == 4);
}

TEST_CASE("scripted failures and misses") {
    ScriptedClient c({{"x", {"ok"}, 1}});
    CHECK(error_code_of([&] { c.complete("x", {}); }) == Errc::BackendError);
    CHECK(c.complete("x", {}) == "ok");
    CHECK(error_code_of([&] { c.complete("y", {}); }) == Errc::BackendError);
}

TEST_CASE("scripted client from json") {
    auto j = nlohmann::json::parse(R"({"model": "m", "max_concurrency": 3, "rules": [{"replies": ["r"]}]})");
    auto c = ScriptedClient::from_json(j);
    CHECK(c.identity() == "m");
    CHECK(c.max_concurrency() == 3);
    CHECK(c.complete("anything", {}) == "r");
    CHECK(error_code_of([] { ScriptedClient::from_json(nlohmann::json::object()); }) == Errc::ConfigError);
    CHECK(error_code_of([] { ScriptedClient::from_file("/nonexistent/replies.json"); }) == Errc::IoFailure);
}

TEST_CASE("http request body and reply extraction") {
    SamplingParams s;
    s.temperature = 0.6;
    s.max_new_tokens = 2048;
    s.seed = 4;
    auto body = HttpChatClient::request_body("qwq", "hello", s);
    CHECK(body["model"] == "qwq");
    CHECK(body["messages"][0]["role"] == "user");
    CHECK(body["messages"][0]["content"] == "hello");
    CHECK(body["max_tokens"] == 2048);
    CHECK(body["seed"] == 4);

    CHECK(HttpChatClient::extract_reply(R"({"choices":[{"message":{"content":"Line_2"}}]})") == "Line_2");
    CHECK(HttpChatClient::extract_reply(
              R"({"choices":[{"message":{"content":"Line_2","reasoning_content":"hmm"}}]})") ==
          "<think>hmm</think>Line_2");
    CHECK(error_code_of([] { HttpChatClient::extract_reply("not json"); }) == Errc::BackendError);
    CHECK(error_code_of([] { HttpChatClient::extract_reply(R"({"choices":[]})"); }) == Errc::BackendError);
}

TEST_CASE("http client reports unreachable servers as backend errors") {
    HttpClientConfig cfg;
    cfg.base_url = "http://127.0.0.1:1";
    cfg.timeout_seconds = 2;
    HttpChatClient c(cfg);
    CHECK(error_code_of([&] { c.complete("hi", {}); }) == Errc::BackendError);
    CHECK(error_code_of([] { HttpChatClient(HttpClientConfig{}); }) == Errc::ConfigError);
}

}
