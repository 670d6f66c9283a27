#include <atomic>
#include <thread>

#include <doctest.h>

#include "imm/baselines.hpp"
#include "imm/chat_client.hpp"
#include "imm/detail/run_bounded.hpp"
#include "support/synthetic.hpp"
#include "test_util.hpp"

using namespace imm;
using imm::testing::error_code_of;

namespace {

BaselineOptions fast() {
    BaselineOptions o;
    o.retry.base_backoff = std::chrono::milliseconds(0);
    return o;
}

}  // namespace

TEST_SUITE("baselines") {

TEST_CASE("yes/no parsing") {
    CHECK(parse_yes_no("Yes") == YesNo::Yes);
    CHECK(parse_yes_no("No, this conversation is benign.") == YesNo::No);
    CHECK(parse_yes_no("maybe") == YesNo::Abstain);
    CHECK(parse_yes_no("yes.") == YesNo::Yes);
    CHECK(parse_yes_no("  NOPE") == YesNo::No);
    CHECK(parse_yes_no("Yeah, it is.") == YesNo::Yes);
    CHECK(parse_yes_no("Nobody knows; yes") == YesNo::Yes);
    CHECK(parse_yes_no("Noted. The answer: no") == YesNo::No);
    CHECK(parse_yes_no("yesterday") == YesNo::Abstain);
    CHECK(parse_yes_no("") == YesNo::Abstain);
    CHECK(yes_no_name(YesNo::Abstain) == "abstain");
}

TEST_CASE("abstentions are never correct") {
    CHECK(is_correct(YesNo::Yes, true));
    CHECK(is_correct(YesNo::No, false));
    CHECK_FALSE(is_correct(YesNo::Abstain, true));
    CHECK_FALSE(is_correct(YesNo::Abstain, false));
}

TEST_CASE("zero-shot answers come from the scripted backend") {
    ScriptedClient client({{"Answer with Yes or No", {"Yes", "No, this conversation is benign.", "maybe"}, 0}});
    auto conv = imm::testing::synthetic_dialogues(1, 1)[0];
    const auto prompt = build_zero_shot_prompt(conv);
    CHECK(prompt.find(format_plain(conv)) != std::string::npos);
    auto opts = fast();
    CHECK(zero_shot_classify(client, conv, opts).answer == YesNo::Yes);
    opts.sampling.seed = 1;
    CHECK(zero_shot_classify(client, conv, opts).answer == YesNo::No);
    opts.sampling.seed = 2;
    auto third = zero_shot_classify(client, conv, opts);
    CHECK(third.answer == YesNo::Abstain);
    CHECK(third.raw_text == "maybe");
}

TEST_CASE("thinking is stripped before parsing") {
    ScriptedClient client({{"", {"No wait, let me think</think>Yes"}, 0}});
    CHECK(ask_yes_no(client, "q", fast()).answer == YesNo::Yes);
}

TEST_CASE("transient failures are retried, persistent ones surface") {
    ScriptedClient flaky({{"", {"no"}, 2}});
    CHECK(ask_yes_no(flaky, "q", fast()).answer == YesNo::No);
    CHECK(flaky.calls() == 3);
    ScriptedClient dead({{"", {"no"}, 10}});
    auto opts = fast();
    opts.retry.retry_limit = 2;
    CHECK(error_code_of([&] { ask_yes_no(dead, "q", opts); }) == Errc::BackendError);
    CHECK(dead.calls() == 3);
}

TEST_CASE("few-shot prompt uses two of each class and never the query") {
    auto pool = imm::testing::synthetic_dialogues(4, 3);
    auto query = pool[0];
    auto p = build_few_shot_prompt(imm::testing::synthetic_dialogues(6, 3)[5], pool, 1);
    CHECK(p.exemplar_ids.size() == 4);
    CHECK(std::set<std::string>(p.exemplar_ids.begin(), p.exemplar_ids.end()).size() == 4);
    CHECK(std::count(p.exemplar_labels.begin(), p.exemplar_labels.end(), true) == 2);
    CHECK(p.text.find("Answer with Yes or No") != std::string::npos);

    auto big = imm::testing::synthetic_dialogues(20, 4);
    std::set<std::vector<std::string>> seen;
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        auto fp = build_few_shot_prompt(big[3], big, seed);
        CHECK(std::find(fp.exemplar_ids.begin(), fp.exemplar_ids.end(), big[3].id) == fp.exemplar_ids.end());
        CHECK(std::count(fp.exemplar_labels.begin(), fp.exemplar_labels.end(), false) == 2);
        seen.insert(fp.exemplar_ids);
        CHECK(build_few_shot_prompt(big[3], big, seed).text == fp.text);
    }
    CHECK(seen.size() > 10);

    CHECK(error_code_of([&] { build_few_shot_prompt(query, pool, 0); }) == Errc::InsufficientPool);
    pool.pop_back();
    CHECK(error_code_of([&] { build_few_shot_prompt(query, pool, 0); }) == Errc::InsufficientPool);
}

TEST_CASE("few-shot classification reports its exemplars") {
    ScriptedClient client({{"Answer with Yes or No", {"yes"}, 0}});
    auto pool = imm::testing::synthetic_dialogues(8, 5);
    auto a = few_shot_classify(client, pool[0], pool, 7, fast());
    CHECK(a.answer.answer == YesNo::Yes);
    CHECK(a.exemplar_ids == build_few_shot_prompt(pool[0], pool, 7).exemplar_ids);
}

TEST_CASE("bounded runner keeps order and respects the cap") {
    ScriptedClient client({{"", {"x"}, 0}}, "m", 3);
    std::atomic<int> live{0}, peak{0};
    auto out = run_bounded<std::size_t>(client, 20, [&](std::size_t i) {
        const int now = ++live;
        int p = peak.load();
        while (now > p && !peak.compare_exchange_weak(p, now)) {}
        std::this_thread::sleep_for(std::chrono::milliseconds(2));
        --live;
        return i * i;
    });
    for (std::size_t i = 0; i < 20; ++i) CHECK(out[i] == i * i);
    CHECK(peak.load() <= 3);
    CHECK(error_code_of([&] {
              run_bounded<int>(client, 5, [](std::size_t i) -> int {
                  if (i == 2) throw Error(Errc::BackendError, "boom");
                  return 0;
              });
          }) == Errc::BackendError);
}

}
