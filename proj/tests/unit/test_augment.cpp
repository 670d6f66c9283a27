#include <atomic>
#include <thread>

#include <doctest.h>

#include "imm/augment.hpp"
#include "imm/templates.hpp"
#include "support/synthetic.hpp"
#include "test_util.hpp"

using namespace imm;
using imm::testing::error_code_of;
using imm::testing::kData;
using imm::testing::slurp;

namespace {

std::vector<std::string> reference_a_inferences() {
    std::vector<std::string> out;
    std::istringstream in(slurp(kData / "fixtures/reference_a_inferences.txt"));
    for (std::string line; std::getline(in, line);) out.push_back(line);
    return out;
}

Conversation reference_a() { return parse_dialogue(slurp(kData / "fixtures/reference_a_dialogue.txt"), "reference_a"); }

SampleOptions quick(int n) {
    SampleOptions o;
    o.n = n;
    o.sampling.seed = 0;
    o.retry.base_backoff = std::chrono::milliseconds(0);
    return o;
}

InferenceRecord record(int k, LineLabelSet s) {
    InferenceRecord r;
    r.run_index = k;
    r.raw_text = s.serialize();
    r.parsed.lines = std::move(s);
    return r;
}

// Counts how many calls are in flight at once.
class GaugeClient final : public ChatModelClient {
public:
    explicit GaugeClient(std::size_t limit) : limit_(limit) {}
    std::string complete(const std::string&, const SamplingParams&) override {
        const int now = ++active_;
        int seen = peak_.load();
        while (now > seen && !peak_.compare_exchange_weak(seen, now)) {}
        std::this_thread::sleep_for(std::chrono::milliseconds(5));
        --active_;
        return "Line_1";
    }
    std::string identity() const override { return "gauge"; }
    std::size_t max_concurrency() const override { return limit_; }
    int peak() const { return peak_.load(); }

private:
    std::size_t limit_;
    std::atomic<int> active_{0}, peak_{0};
};

}  // namespace

TEST_SUITE("augment") {

TEST_CASE("thinking prompt matches the golden file") {
    const auto prompt = build_thinking_prompt(reference_a());
    CHECK(prompt == slurp(kData / "golden/reference_a_full_prompt.txt"));
    const std::string tail = "It could be just happening in a single line.";
    CHECK(prompt.substr(prompt.size() - tail.size()) == tail);
}

TEST_CASE("thinking prompt for one turn") {
    const auto prompt = build_thinking_prompt(parse_dialogue("Person1: Hi", "s"));
    CHECK(prompt.rfind("Line_1: Person1: Hi\n\n", 0) == 0);
    const auto line2 = prompt.find("Line_2");
    CHECK((line2 == std::string::npos || line2 > prompt.find("\n\n")));
}

TEST_CASE("parse_line_response") {
    CHECK(*parse_line_response("Line_1, Line_3, Line_5", 6).lines == LineLabelSet{1, 3, 5});
    CHECK(*parse_line_response("Line_5", 6).lines == LineLabelSet{5});
    CHECK_FALSE(parse_line_response("There is no manipulation here.", 6).ok());
    auto r = parse_line_response("Line_9, Line_2", 6);
    REQUIRE(r.ok());
    CHECK(*r.lines == LineLabelSet{2});
    REQUIRE(r.warnings.size() == 1);
    CHECK(r.warnings[0].find('9') != std::string::npos);
    CHECK(*parse_line_response("see LINE_4 and line_2.", 6).lines == LineLabelSet{2, 4});
    CHECK_FALSE(parse_line_response("Pipeline_3", 6).ok());
    CHECK_FALSE(parse_line_response("Line_", 6).ok());
}

TEST_CASE("strip_thinking keeps text after the last delimiter") {
    CHECK(strip_thinking("<think>Line_9</think>Line_2") == "Line_2");
    CHECK(strip_thinking("a</think>b</think>c") == "c");
    CHECK(strip_thinking("plain") == "plain");
    CHECK(*parse_line_response(strip_thinking("<think>maybe Line_4?</think> Line_1"), 6).lines == LineLabelSet{1});
}

TEST_CASE("sample_runs returns the ten scripted inferences in order") {
    ScriptedClient client({{"", reference_a_inferences(), 0}});
    auto records = sample_runs(client, reference_a(), quick(10));
    REQUIRE(records.size() == 10);
    const std::vector<LineLabelSet> want{{5}, {1, 5}, {3, 5}, {1, 3, 5}, {5}, {3, 5}, {1, 3, 5}, {1, 3, 5}, {1, 3, 5}, {1, 3}};
    for (std::size_t i = 0; i < 10; ++i) {
        CHECK(records[i].run_index == static_cast<int>(i + 1));
        REQUIRE(records[i].parsed.ok());
        CHECK(*records[i].parsed.lines == want[i]);
    }
    CHECK(aggregate_majority(records) == LineLabelSet{1, 3, 5});
}

TEST_CASE("sample_runs single run and retries") {
    ScriptedClient one({{"", {"Line_2"}, 0}});
    CHECK(sample_runs(one, reference_a(), quick(1)).size() == 1);

    ScriptedClient flaky({{"", {"Line_2"}, 2}});
    auto opts = quick(1);
    opts.retry.retry_limit = 3;
    auto recs = sample_runs(flaky, reference_a(), opts);
    REQUIRE(recs.size() == 1);
    CHECK_FALSE(recs[0].error.has_value());
    CHECK(*recs[0].parsed.lines == LineLabelSet{2});
    CHECK(flaky.calls() == 3);

    ScriptedClient dead({{"", {"Line_2"}, 100}});
    opts.retry.retry_limit = 2;
    auto failed = sample_runs(dead, reference_a(), opts);
    CHECK(failed[0].error.has_value());
    CHECK(dead.calls() == 3);
}

TEST_CASE("sample_runs honors the client's concurrency limit") {
    GaugeClient gauge(3);
    auto recs = sample_runs(gauge, reference_a(), quick(12));
    CHECK(recs.size() == 12);
    CHECK(gauge.peak() <= 3);
    GaugeClient serial(1);
    sample_runs(serial, reference_a(), quick(4));
    CHECK(serial.peak() == 1);
}

TEST_CASE("aggregate_majority counting") {
    std::vector<InferenceRecord> one{record(1, {2})};
    CHECK(aggregate_majority(one) == LineLabelSet{2});
    std::vector<InferenceRecord> spread{record(1, {1}), record(2, {2}), record(3, {3})};
    CHECK(aggregate_majority(spread).empty());
    // exactly half is not a majority
    std::vector<InferenceRecord> tie{record(1, {1}), record(2, {2})};
    CHECK(aggregate_majority(tie).empty());
    // failed parses do not count toward the denominator
    InferenceRecord bad;
    bad.run_index = 3;
    bad.raw_text = "no idea";
    std::vector<InferenceRecord> with_bad{record(1, {4}), record(2, {4}), bad};
    CHECK(aggregate_majority(with_bad) == LineLabelSet{4});
    std::vector<InferenceRecord> none{bad};
    CHECK(error_code_of([&] { aggregate_majority(none); }) == Errc::NoValidRuns);
}

TEST_CASE("aggregate_majority against a counting oracle") {
    Rng rng(8);
    for (int trial = 0; trial < 200; ++trial) {
        const int n = 1 + static_cast<int>(rng.below(12)), lines = 1 + static_cast<int>(rng.below(8));
        const double threshold = rng.uniform();
        std::vector<InferenceRecord> recs;
        std::vector<int> count(lines + 1, 0);
        for (int k = 1; k <= n; ++k) {
            LineLabelSet s;
            for (int l = 1; l <= lines; ++l)
                if (rng.uniform() < 0.5) {
                    s.insert(l);
                    ++count[l];
                }
            recs.push_back(record(k, s));
        }
        LineLabelSet want;
        for (int l = 1; l <= lines; ++l)
            if (count[l] > threshold * n) want.insert(l);
        CHECK(aggregate_majority(recs, threshold) == want);
    }
}

TEST_CASE("aggregate_llm") {
    std::vector<InferenceRecord> recs{record(1, {1}), record(2, {1, 3})};
    ScriptedClient agg({{"", {"Line_1, Line_3, Line_5"}, 0}});
    CHECK(*aggregate_llm(agg, recs, 6).lines == LineLabelSet{1, 3, 5});
    ScriptedClient prose({{"", {"<think>hmm</think>Most runs agree that Line_2 is the culprit."}, 0}});
    CHECK(*aggregate_llm(prose, recs, 6).lines == LineLabelSet{2});

    std::vector<InferenceRecord> single{record(1, {4})};
    const auto summary_prompt = build_summary_prompt(single);
    ScriptedClient echo({{"Answer 1: Line_4", {"Line_4"}, 0}});
    CHECK(*aggregate_llm(echo, single, 6).lines == LineLabelSet{4});
    CHECK(summary_prompt.find("{answers}") == std::string::npos);
}

TEST_CASE("augment_dataset") {
    auto c = reference_a();
    c.binary_label = true;
    Conversation calm = parse_dialogue("Person1: hi\nPerson2: hello", "calm");
    calm.binary_label = false;
    ScriptedClient client({{"", reference_a_inferences(), 0}});
    AugmentOptions opts;
    opts.sample = quick(10);
    auto res = augment_dataset(client, {c, calm}, opts);
    REQUIRE(res.examples.size() == 2);
    CHECK(res.examples[0].target == "Line_1, Line_3, Line_5");
    CHECK(res.examples[1].target == "None");
    CHECK(client.calls() == 10);  // the negative needed none
    CHECK(res.provenance.size() == 10);
    CHECK(res.stats.manipulative == 1);
    CHECK(res.stats.non_manipulative == 1);
}

TEST_CASE("augment_dataset skips conversations without a valid run") {
    std::vector<Conversation> batch;
    for (const char* id : {"a", "b", "c"}) {
        auto conv = parse_dialogue(std::string("Person1: ") + id + "\nPerson2: ok", id);
        conv.binary_label = true;
        batch.push_back(conv);
    }
    ScriptedClient client({{"Person1: b", {"I cannot tell."}, 0}, {"", {"Line_1"}, 0}});
    AugmentOptions opts;
    opts.sample = quick(3);
    auto res = augment_dataset(client, batch, opts);
    CHECK(res.examples.size() == 2);
    REQUIRE(res.skipped.size() == 1);
    CHECK(res.skipped[0].conversation_id == "b");
}

TEST_CASE("augment_dataset needs binary labels and falls back when the summarizer rambles") {
    auto c = reference_a();
    ScriptedClient client({{"", {"Line_1"}, 0}});
    AugmentOptions opts;
    opts.sample = quick(2);
    CHECK(error_code_of([&] { augment_dataset(client, {c}, opts); }) == Errc::LabelMissing);

    c.binary_label = true;
    ScriptedClient sampler({{"", {"Line_2"}, 0}});
    ScriptedClient summarizer({{"", {"I refuse."}, 0}});
    opts.aggregator = Aggregator::Llm;
    opts.summarizer = &summarizer;
    auto res = augment_dataset(sampler, {c}, opts);
    CHECK(res.examples[0].target == "Line_2");
    CHECK(res.stats.llm_fallbacks == 1);
}

TEST_CASE("augmented examples serialize") {
    auto ex = make_example(reference_a(), LineLabelSet{1, 3});
    CHECK(ex.prompt() == templates::render(templates::explain_prompt(), {{"dialogue", format_with_lines(reference_a())}}));
    auto back = augmented_from_json(to_json(ex));
    CHECK(back.conversation_id == ex.conversation_id);
    CHECK(back.target == "Line_1, Line_3");
    CHECK(back.prompt() == ex.prompt());
}

}

TEST_SUITE("templates") {

TEST_CASE("render substitutes once") {
    CHECK(templates::render("a {x} b {y}", {{"x", "1"}, {"y", "{x}"}}) == "a 1 b {x}");
    CHECK(templates::render("{unknown} stays", {{"x", "1"}}) == "{unknown} stays");
}

TEST_CASE("shipped templates carry their placeholders") {
    CHECK(templates::explain_prompt().find("{dialogue}") != std::string_view::npos);
    CHECK(templates::zero_shot_prompt().find("{dialogue}") != std::string_view::npos);
    CHECK(templates::few_shot_prompt().find("{examples}") != std::string_view::npos);
    CHECK(templates::summarize_prompt().find("{answers}") != std::string_view::npos);
    CHECK(templates::thinking_prompt().find("Line_X") != std::string_view::npos);
}

}
