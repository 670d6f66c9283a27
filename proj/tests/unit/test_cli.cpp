#include <regex>
#include <sstream>

#include <doctest.h>

#include "imm/checkpoint.hpp"
#include "imm/classifier.hpp"
#include "imm/cli.hpp"
#include "imm/eval.hpp"
#include "support/synthetic.hpp"
#include "test_util.hpp"

using namespace imm;
using imm::testing::error_code_of;
using imm::testing::kData;
using imm::testing::slurp;
using imm::testing::spit;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    int code;
    std::string out, err;
};

Outcome run_cli(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

std::string csv_field(const std::string& s) {
    std::string q = "\"";
    for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
    return q + "\"";
}

// Writes conversations as a corpus CSV with binary labels only.
fs::path write_corpus(const fs::path& dir, const std::vector<Conversation>& convs) {
    std::string text = "id,dialogue,manipulative,techniques,vulnerabilities\n";
    for (const auto& c : convs)
        text += c.id + "," + csv_field(format_plain(c)) + "," + (*c.binary_label ? "1" : "0") + ",,\n";
    spit(dir / "corpus.csv", text);
    return dir / "corpus.csv";
}

json tiny_config(const fs::path& corpus, double train, double test) {
    return json{{"seed", 5},
                {"data", {{"path", corpus.string()}, {"split", {{"train", train}, {"val", 0.0}, {"test", test}}}}},
                {"client", {{"base_url", "http://127.0.0.1:1"}, {"model", "m"}, {"api_key_env", "IMM_TEST_KEY"}}},
                {"augment", {{"samples", 5}, {"backoff_ms", 0}}},
                {"backbone", {{"d_model", 16}, {"n_layers", 1}, {"n_heads", 2}, {"d_ff", 32}, {"max_seq", 256}}},
                {"train", {{"learning_rate", 0.02}, {"epochs", 3}, {"batch_size", 2}, {"rank", 4}, {"max_sequence_length", 256}}},
                {"baseline", {{"backoff_ms", 0}}}};
}

fs::path write_config(const fs::path& dir, const json& j, const std::string& name = "config.json") {
    spit(dir / name, j.dump(2));
    return dir / name;
}

std::string mock() { return (kData / "fixtures/mock_replies.json").string(); }

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("environment interpolation") {
    cli::EnvLookup env = [](std::string_view name) -> std::optional<std::string> {
        if (name == "HOST") return std::string("example.test");
        return std::nullopt;
    };
    auto j = cli::interpolate_env(json{{"url", "https://${HOST}/v1"}, {"n", 3}, {"list", {"${HOST}"}}}, env);
    CHECK(j["url"] == "https://example.test/v1");
    CHECK(j["n"] == 3);
    CHECK(j["list"][0] == "example.test");
    CHECK(error_code_of([&] { cli::interpolate_env(json{{"k", "${MISSING}"}}, env); }) == Errc::ConfigError);
    CHECK(error_code_of([&] { cli::interpolate_env(json{{"k", "${HOST"}}, env); }) == Errc::ConfigError);
}

TEST_CASE("config loading resolves paths and keeps placeholders on record") {
    imm::testing::TempDir tmp("cfg");
    fs::create_directories(tmp.path() / "sub");
    spit(tmp.path() / "sub/c.json", R"({
        // comments are allowed
        "seed": 2,
        "data": {"path": "${DATA_DIR}/x.csv"},
        "augment": {"seed": 9}
    })");
    cli::EnvLookup env = [](std::string_view n) -> std::optional<std::string> {
        if (n == "DATA_DIR") return std::string("rel");
        return std::nullopt;
    };
    auto c = cli::load_config(tmp.path() / "sub/c.json", std::nullopt, env);
    CHECK(c.recorded["data"]["path"] == "${DATA_DIR}/x.csv");
    CHECK(c.path_at(json::json_pointer("/data/path")) == tmp.path() / "sub/rel/x.csv");
    CHECK(c.seed() == 2);
    CHECK(error_code_of([&] { c.path_at(json::json_pointer("/nope")); }) == Errc::ConfigError);

    auto o = cli::load_config(tmp.path() / "sub/c.json", 11, env);
    CHECK(o.seed() == 11);
    CHECK_FALSE(o.resolved["augment"].contains("seed"));
    CHECK(o.hash != c.hash);
    CHECK(error_code_of([&] { cli::load_config(tmp.path() / "sub/c.json", std::nullopt, [](std::string_view) {
              return std::optional<std::string>{};
          }); }) == Errc::ConfigError);
    CHECK(error_code_of([&] { cli::load_config(tmp.path() / "none.json", std::nullopt, env); }) == Errc::ConfigError);
}

TEST_CASE("run directories are versioned") {
    imm::testing::TempDir tmp("runs");
    CHECK(cli::next_run_dir(tmp.path()) == tmp.path() / "run-001");
    fs::create_directories(tmp.path() / "run-001");
    fs::create_directories(tmp.path() / "run-007");
    CHECK(cli::next_run_dir(tmp.path()) == tmp.path() / "run-008");
}

TEST_CASE("bad arguments exit non-zero") {
    CHECK(run_cli({}).code != 0);
    CHECK(run_cli({"frobnicate"}).code != 0);
    CHECK(run_cli({"augment"}).code != 0);
    auto r = run_cli({"augment", "--config", "/definitely/not/here.json"});
    CHECK(r.code == 1);
    CHECK(r.err.find("error:") == 0);
}

TEST_CASE("ingest reports the split") {
    imm::testing::TempDir tmp("ingest");
    auto r = run_cli({"ingest", "--config", (kData / "fixtures/smoke_config.json").string(), "--out", tmp.path().string()});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    CHECK(r.out.find("loaded: 30") != std::string::npos);
    CHECK(fs::exists(tmp.path() / "run-001/train.jsonl"));
    CHECK(fs::exists(tmp.path() / "run-001/config_hash"));
}

TEST_CASE("augment writes one record per conversation and reruns are identical") {
    imm::testing::TempDir tmp("augment");
    auto cfg = write_config(tmp.path(), tiny_config(write_corpus(tmp.path(), imm::testing::synthetic_dialogues(3, 2)), 1.0, 0.0));
    auto a = run_cli({"augment", "--config", cfg.string(), "--out", (tmp.path() / "o").string(), "--mock-client", mock()});
    REQUIRE_MESSAGE(a.code == 0, a.err);
    CHECK(a.out.find("augmented: 3") != std::string::npos);
    CHECK(a.out.find("skipped: 0") != std::string::npos);
    const auto first = tmp.path() / "o/run-001";
    const auto records = slurp(first / "augmented.jsonl");
    CHECK(std::count(records.begin(), records.end(), '\n') == 3);
    auto b = run_cli({"augment", "--config", cfg.string(), "--out", (tmp.path() / "o").string(), "--mock-client", mock()});
    REQUIRE(b.code == 0);
    for (const auto& entry : fs::directory_iterator(first))
        CHECK_MESSAGE(slurp(entry.path()) == slurp(tmp.path() / "o/run-002" / entry.path().filename()), entry.path());
    CHECK(slurp(first / "config.json").find("IMM_TEST_KEY") != std::string::npos);
}

TEST_CASE("augment skips conversations with no valid runs") {
    imm::testing::TempDir tmp("skip");
    auto convs = imm::testing::synthetic_dialogues(3, 2);
    convs[1].turns[0].text = "The zebra crossing is closed.";
    auto cfg = write_config(tmp.path(), tiny_config(write_corpus(tmp.path(), convs), 1.0, 0.0));
    spit(tmp.path() / "mock.json", json{{"model", "m"},
                                        {"rules", {{{"match", "zebra"}, {"replies", {"I cannot say."}}},
                                                   {{"match", ""}, {"replies", {"Line_1", "Line_1, Line_2"}}}}}}
                                           .dump());
    auto r = run_cli({"augment", "--config", cfg.string(), "--out", (tmp.path() / "o").string(), "--mock-client",
                  (tmp.path() / "mock.json").string()});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    CHECK(r.out.find("augmented: 2") != std::string::npos);
    CHECK(r.out.find("skipped: 1") != std::string::npos);
    CHECK(r.out.find(convs[1].id) != std::string::npos);
}

TEST_CASE("full pipeline: augment, train-sft, train-cls, eval") {
    imm::testing::TempDir tmp("pipeline");
    auto corpus = write_corpus(tmp.path(), imm::testing::synthetic_dialogues(10, 6));
    const auto out = (tmp.path() / "o").string();
    auto base = tiny_config(corpus, 1.0, 0.0);
    auto cfg = write_config(tmp.path(), base);
    REQUIRE(run_cli({"augment", "--config", cfg.string(), "--out", out, "--mock-client", mock()}).code == 0);

    base["train_sft"] = {{"augmented", (tmp.path() / "o/run-001/augmented.jsonl").string()}};
    cfg = write_config(tmp.path(), base);
    auto sft = run_cli({"train-sft", "--config", cfg.string(), "--out", out});
    REQUIRE_MESSAGE(sft.code == 0, sft.err);
    std::smatch m;
    const std::regex loss_re(R"(loss: ([0-9.]+) -> ([0-9.]+))");
    REQUIRE(std::regex_search(sft.out, m, loss_re));
    CHECK(std::stod(m[2]) < std::stod(m[1]));
    const auto p1 = tmp.path() / "o/run-002/checkpoint";
    auto manifest = read_manifest(p1);
    CHECK(manifest["config_hash"] == slurp(tmp.path() / "o/run-002/config_hash").substr(0, 16));
    CHECK(manifest.contains("data_hash"));

    auto missing = run_cli({"train-cls", "--config", cfg.string(), "--out", out});
    CHECK(missing.code == 1);
    CHECK(missing.err.find("MissingCheckpoint") != std::string::npos);

    base["data"]["split"] = {{"train", 0.5}, {"val", 0.0}, {"test", 0.5}};
    cfg = write_config(tmp.path(), base);
    auto cls = run_cli({"train-cls", "--config", cfg.string(), "--out", out, "--checkpoint", p1.string()});
    REQUIRE_MESSAGE(cls.code == 0, cls.err);
    CHECK(cls.out.find("task: binary") != std::string::npos);

    auto ev = run_cli({"eval", "--config", cfg.string(), "--out", out, "--checkpoint", (tmp.path() / "o/run-003/checkpoint").string()});
    REQUIRE_MESSAGE(ev.code == 0, ev.err);
    auto report = report_from_json(json::parse(slurp(tmp.path() / "o/run-004/metrics.json")));
    CHECK(report.n_items == 5);
    CHECK(report.config_hash == slurp(tmp.path() / "o/run-004/config_hash").substr(0, 16));
    CHECK(fs::exists(tmp.path() / "o/run-004/metrics.txt"));
    CHECK(fs::exists(tmp.path() / "o/run-004/predictions.jsonl"));
}

TEST_CASE("eval with a hand-set head matches hand-computed metrics") {
    imm::testing::TempDir tmp("handset");
    auto convs = imm::testing::synthetic_dialogues(5, 8);  // labels alternate, 2 of 5 positive
    auto cfg = write_config(tmp.path(), tiny_config(write_corpus(tmp.path(), convs), 0.0001, 0.9999));

    BackboneConfig bc;
    bc.d_model = 16;
    bc.n_layers = 1;
    bc.n_heads = 2;
    bc.d_ff = 32;
    bc.max_seq = 256;
    auto model = std::make_shared<DecoderModel>(bc);
    TrainConfig tc;
    tc.rank = 4;
    model->add_adapter_set(tc.adapter_spec());
    model->add_adapter_set(tc.adapter_spec());
    // Zero weights and a positive bias: every conversation is predicted manipulative.
    auto clf = attach_classifier(model, ClassificationHead::from_values(MatrixD(16, 1), MatrixD(1, 1, 3.0)), Pooling::LastToken);
    save_phase2(tmp.path() / "p2", clf, TaskKind::Binary, tc, PhaseReport{});

    auto r = run_cli({"eval", "--config", cfg.string(), "--out", (tmp.path() / "o").string(), "--checkpoint", (tmp.path() / "p2").string()});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    auto report = report_from_json(json::parse(slurp(tmp.path() / "o/run-001/metrics.json")));
    const std::size_t n = 5, pos = 2;
    REQUIRE(report.n_items == n);
    CHECK(report.counts.tp == pos);
    CHECK(report.counts.tn == 0);
    CHECK(report.counts.fn == 0);
    CHECK(report.accuracy == static_cast<double>(pos) / n);
    CHECK(report.precision == static_cast<double>(pos) / n);
    CHECK(report.recall == 1.0);
    CHECK(report.f1 == doctest::Approx(2.0 * pos / (pos + n)).epsilon(1e-12));
}

TEST_CASE("baselines log their exemplars and abstentions") {
    imm::testing::TempDir tmp("baseline");
    auto cfg = write_config(tmp.path(), tiny_config(write_corpus(tmp.path(), imm::testing::synthetic_dialogues(12, 3)), 0.5, 0.5));
    auto fs_run = run_cli({"baseline-fewshot", "--config", cfg.string(), "--out", (tmp.path() / "o").string(), "--mock-client", mock()});
    REQUIRE_MESSAGE(fs_run.code == 0, fs_run.err);
    const std::regex q(R"(query s\d+: exemplars( s\d+){4})");
    CHECK(std::distance(std::sregex_iterator(fs_run.out.begin(), fs_run.out.end(), q), std::sregex_iterator()) == 6);
    CHECK(fs_run.out.find("model: scripted-reasoner") != std::string::npos);

    auto zs = run_cli({"baseline-zeroshot", "--config", cfg.string(), "--out", (tmp.path() / "o").string(), "--mock-client", mock()});
    REQUIRE_MESSAGE(zs.code == 0, zs.err);
    CHECK(zs.out.find("abstentions:") != std::string::npos);
    CHECK(fs::exists(tmp.path() / "o/run-002/metrics.json"));
}

TEST_CASE("explain marks flagged lines") {
    imm::testing::TempDir tmp("explain");
    auto cfg = write_config(tmp.path(), tiny_config(tmp.path() / "unused.csv", 1.0, 0.0));
    const auto dialogue = (kData / "fixtures/reference_b_dialogue.txt").string();
    auto r = run_cli({"explain", "--config", cfg.string(), "--out", (tmp.path() / "o").string(), "--mock-client", mock(),
                  "--dialogue", dialogue});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    CHECK(r.out.find(">> Line_2:") != std::string::npos);
    CHECK(r.out.find(">> Line_4:") != std::string::npos);
    CHECK(r.out.find("   Line_1:") != std::string::npos);
    CHECK(r.out.find("flagged: Line_2, Line_4") != std::string::npos);
    CHECK(fs::exists(tmp.path() / "o/run-001/explanation.json"));

    auto reply = [&](const std::string& text) {
        spit(tmp.path() / "m.json", json{{"rules", {{{"match", ""}, {"replies", {text}}}}}}.dump());
        return run_cli({"explain", "--config", cfg.string(), "--out", (tmp.path() / "o").string(), "--mock-client",
                    (tmp.path() / "m.json").string(), "--dialogue", dialogue});
    };
    auto none = reply("None");
    REQUIRE(none.code == 0);
    CHECK(none.out.find(">>") == std::string::npos);
    CHECK(none.err.empty());
    auto junk = reply("I would rather not say.");
    REQUIRE(junk.code == 0);
    CHECK(junk.out.find(">>") == std::string::npos);
    CHECK(junk.out.find("I would rather not say.") != std::string::npos);
    CHECK(junk.err.find("warning:") != std::string::npos);
}

}
