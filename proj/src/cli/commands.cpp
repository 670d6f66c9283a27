#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>
#include <sstream>

#include <CLI11.hpp>

#include "imm/augment.hpp"
#include "imm/baselines.hpp"
#include "imm/checkpoint.hpp"
#include "imm/cli.hpp"
#include "imm/error.hpp"
#include "imm/eval.hpp"
#include "imm/hash.hpp"
#include "imm/training.hpp"

namespace imm::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Options {
    std::string config;
    std::string out;
    std::optional<std::uint64_t> seed;
    std::string mock_client;
    std::string dialogue;
    std::string checkpoint;
};

struct Context {
    RunConfig config;
    Options opts;
    fs::path run_dir;
    std::ostream& out;
    std::ostream& err;

    json section(const char* name) const {
        auto it = config.resolved.find(name);
        if (it == config.resolved.end() || it->is_null()) return json::object();
        if (!it->is_object()) throw Error(Errc::ConfigError, std::string("config section '") + name + "' must be an object");
        return *it;
    }
};

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(Errc::IoFailure, "cannot read '" + path.string() + "'");
    std::stringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void write_file(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
    if (!out) throw Error(Errc::IoFailure, "cannot write '" + path.string() + "'");
}

void write_jsonl(const fs::path& path, const std::vector<json>& rows) {
    std::string text;
    for (const auto& r : rows) text += r.dump() + "\n";
    write_file(path, text);
}

fs::path start_run(Context& ctx) {
    fs::path out = !ctx.opts.out.empty()            ? fs::path(ctx.opts.out)
                   : ctx.config.resolved.contains("out") ? ctx.config.path_at(json::json_pointer("/out"))
                                                         : fs::path("runs");
    ctx.run_dir = next_run_dir(out);
    write_file(ctx.run_dir / "config.json", ctx.config.recorded.dump(2) + "\n");
    write_file(ctx.run_dir / "config_hash", ctx.config.hash + "\n");
    return ctx.run_dir;
}

struct LoadedData {
    DatasetSplit split;
    std::size_t total = 0;
    std::string hash;
};

LoadedData load_data(const Context& ctx) {
    const auto data = ctx.section("data");
    const auto path = ctx.config.path_at(json::json_pointer("/data/path"));
    DatasetSchema schema = schema_from_path(path);
    if (data.contains("schema")) {
        const auto name = data["schema"].get<std::string>();
        if (name == "csv") schema = DatasetSchema::Csv;
        else if (name == "jsonl") schema = DatasetSchema::Jsonl;
        else throw Error(Errc::ConfigError, "unknown data schema '" + name + "'");
    }
    LoadedData loaded;
    auto all = load_dataset(path, schema);
    loaded.total = all.size();
    loaded.hash = content_hash(read_file(path));
    SplitRatios ratios;
    if (data.contains("split")) {
        const auto& s = data["split"];
        ratios.train = s.value("train", ratios.train);
        ratios.val = s.value("val", ratios.val);
        ratios.test = s.value("test", ratios.test);
    }
    loaded.split = split_dataset(all, ratios, data.value("split_seed", ctx.config.seed()));
    return loaded;
}

std::unique_ptr<ChatModelClient> make_client(const Context& ctx) {
    if (!ctx.opts.mock_client.empty())
        return std::unique_ptr<ChatModelClient>(new ScriptedClient(ScriptedClient::from_file(ctx.opts.mock_client)));
    const auto c = ctx.section("client");
    HttpClientConfig hc;
    hc.base_url = c.value("base_url", "");
    hc.path = c.value("path", hc.path);
    hc.model = c.value("model", "");
    hc.api_key_env = c.value("api_key_env", "");
    hc.timeout_seconds = c.value("timeout_seconds", hc.timeout_seconds);
    hc.max_concurrency = c.value("max_concurrency", hc.max_concurrency);
    return std::make_unique<HttpChatClient>(hc);
}

TrainConfig train_config(const Context& ctx, const json& overrides = json::object()) {
    json j = ctx.section("train");
    j.merge_patch(overrides);
    if (!j.contains("seed")) j["seed"] = ctx.config.seed();
    return train_config_from_json(j);
}

json manifest_extras(const Context& ctx, const std::string& data_hash) {
    return json{{"config_hash", ctx.config.hash}, {"data_hash", data_hash}};
}

std::vector<Conversation> with_binary_label(const std::vector<Conversation>& data, std::size_t& dropped) {
    std::vector<Conversation> out;
    for (const auto& c : data)
        if (c.binary_label) out.push_back(c);
    dropped = data.size() - out.size();
    return out;
}

std::string fixed3(double v) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(3) << v;
    return s.str();
}

int cmd_ingest(Context& ctx) {
    auto data = load_data(ctx);
    start_run(ctx);
    auto write_split = [&](const char* name, const std::vector<Conversation>& part) {
        save_jsonl(ctx.run_dir / (std::string(name) + ".jsonl"), part);
        std::size_t pos = 0, neg = 0;
        for (const auto& c : part) {
            if (c.binary_label) (*c.binary_label ? pos : neg)++;
        }
        ctx.out << name << ": " << part.size() << " (" << pos << " manipulative, " << neg << " not)\n";
    };
    ctx.out << "loaded: " << data.total << "\n";
    write_split("train", data.split.train);
    write_split("val", data.split.val);
    write_split("test", data.split.test);
    write_file(ctx.run_dir / "data_hash", data.hash + "\n");
    ctx.out << "run: " << ctx.run_dir.string() << "\n";
    return 0;
}

int cmd_augment(Context& ctx) {
    const auto a = ctx.section("augment");
    AugmentOptions opts;
    opts.sample.n = a.value("samples", opts.sample.n);
    opts.sample.sampling.temperature = a.value("temperature", opts.sample.sampling.temperature);
    opts.sample.sampling.max_new_tokens = a.value("max_new_tokens", opts.sample.sampling.max_new_tokens);
    opts.sample.sampling.seed = a.value("seed", ctx.config.seed());
    opts.sample.retry.retry_limit = a.value("retry_limit", opts.sample.retry.retry_limit);
    opts.sample.retry.base_backoff = std::chrono::milliseconds(a.value("backoff_ms", opts.sample.retry.base_backoff.count()));
    opts.sample.think_delimiter = a.value("think_delimiter", opts.sample.think_delimiter);
    opts.aggregator = aggregator_from_name(a.value("aggregator", std::string("majority")));
    opts.threshold = a.value("threshold", opts.threshold);
    if (opts.sample.n <= 0) throw Error(Errc::ConfigError, "augment.samples must be positive");

    auto data = load_data(ctx);
    auto client = make_client(ctx);
    start_run(ctx);
    // only the training split is augmented; val/test line labels would leak into evaluation
    auto result = augment_dataset(*client, data.split.train, opts);

    std::vector<json> rows;
    for (const auto& ex : result.examples) rows.push_back(to_json(ex));
    write_jsonl(ctx.run_dir / "augmented.jsonl", rows);
    rows.clear();
    for (const auto& p : result.provenance) rows.push_back(to_json(p));
    write_jsonl(ctx.run_dir / "provenance.jsonl", rows);
    rows.clear();
    for (const auto& s : result.skipped) rows.push_back({{"conversation_id", s.conversation_id}, {"reason", s.reason}});
    write_jsonl(ctx.run_dir / "skipped.jsonl", rows);
    const auto& st = result.stats;
    json stats{{"augmented", result.examples.size()},
               {"skipped", result.skipped.size()},
               {"manipulative", st.manipulative},
               {"non_manipulative", st.non_manipulative},
               {"empty_consensus", st.empty_consensus},
               {"llm_fallbacks", st.llm_fallbacks},
               {"mean_exact_agreement", st.mean_exact_agreement},
               {"mean_jaccard", st.mean_jaccard},
               {"model", client->identity()},
               {"data_hash", data.hash}};
    write_file(ctx.run_dir / "stats.json", stats.dump(2) + "\n");

    ctx.out << "augmented: " << result.examples.size() << "\n";
    ctx.out << "skipped: " << result.skipped.size() << "\n";
    for (const auto& s : result.skipped) ctx.out << "  " << s.conversation_id << ": " << s.reason << "\n";
    ctx.out << "agreement: exact " << fixed3(st.mean_exact_agreement) << ", jaccard " << fixed3(st.mean_jaccard) << "\n";
    if (st.empty_consensus > 0) ctx.out << "empty consensus: " << st.empty_consensus << "\n";
    if (st.llm_fallbacks > 0) ctx.out << "summarizer fallbacks: " << st.llm_fallbacks << "\n";
    ctx.out << "run: " << ctx.run_dir.string() << "\n";
    return 0;
}

int cmd_train_sft(Context& ctx) {
    const auto path = ctx.config.path_at(json::json_pointer("/train_sft/augmented"));
    auto examples = load_augmented(path);
    auto backbone = backbone_from_json(ctx.section("backbone"));
    auto cfg = train_config(ctx);
    start_run(ctx);

    DecoderModel model(backbone);
    auto report = train_instruction_phase(model, examples, cfg);
    const auto dir = ctx.run_dir / "checkpoint";
    save_phase1(dir, model, cfg, report, manifest_extras(ctx, content_hash(read_file(path))));

    ctx.out << "examples: " << examples.size() << "\n";
    for (std::size_t e = 0; e < report.epoch_loss.size(); ++e)
        ctx.out << "epoch " << e + 1 << ": loss " << fixed3(report.epoch_loss[e]) << "\n";
    ctx.out << "loss: " << fixed3(report.initial_loss) << " -> " << fixed3(report.final_loss) << "\n";
    ctx.out << "checkpoint: " << dir.string() << "\n";
    return 0;
}

fs::path checkpoint_path(const Context& ctx, const char* pointer) {
    if (!ctx.opts.checkpoint.empty()) return ctx.opts.checkpoint;
    if (ctx.config.resolved.contains(json::json_pointer(pointer))) return ctx.config.path_at(json::json_pointer(pointer));
    throw Error(Errc::MissingCheckpoint, std::string("no checkpoint given (--checkpoint or ") + pointer + ")");
}

int cmd_train_cls(Context& ctx) {
    const auto cls = ctx.section("train_cls");
    const auto task = task_from_name(cls.value("task", std::string("binary")));
    const auto pooling = pooling_from_name(cls.value("pooling", std::string("last_token")));
    auto cfg = train_config(ctx, cls.value("train", json::object()));
    auto phase1 = load_phase1(checkpoint_path(ctx, "/train_cls/phase1_checkpoint"));
    auto data = load_data(ctx);
    std::size_t dropped = 0;
    auto train = with_binary_label(data.split.train, dropped);
    start_run(ctx);

    auto phase = train_classification_phase(phase1.model, train, task, cfg, pooling);
    const auto dir = ctx.run_dir / "checkpoint";
    auto extras = manifest_extras(ctx, data.hash);
    extras["phase1_manifest"] = phase1.manifest;
    save_phase2(dir, phase.classifier, task, cfg, phase.report, extras);

    ctx.out << "task: " << task_name(task) << "\n";
    ctx.out << "examples: " << train.size();
    if (dropped > 0) ctx.out << " (" << dropped << " unlabeled dropped)";
    ctx.out << "\n";
    ctx.out << "loss: " << fixed3(phase.report.initial_loss) << " -> " << fixed3(phase.report.final_loss) << "\n";
    ctx.out << "train accuracy: " << fixed3(phase.train_accuracy) << "\n";
    ctx.out << "checkpoint: " << dir.string() << "\n";
    return 0;
}

std::set<std::size_t> label_set(const std::vector<double>& multi_hot) {
    std::set<std::size_t> s;
    for (std::size_t j = 0; j < multi_hot.size(); ++j)
        if (multi_hot[j] > 0.5) s.insert(j);
    return s;
}

int cmd_eval(Context& ctx) {
    const auto ev = ctx.section("eval");
    auto ckpt = load_phase2(checkpoint_path(ctx, "/eval/checkpoint"));
    const auto task = ev.contains("task") ? task_from_name(ev["task"].get<std::string>()) : ckpt.task;
    const double threshold = ev.value("threshold", 0.5);
    auto data = load_data(ctx);
    std::size_t dropped = 0;
    auto test = with_binary_label(data.split.test, dropped);
    if (test.empty()) throw Error(Errc::EmptyDataset, "test split has no labeled conversations");
    start_run(ctx);

    std::vector<json> rows;
    std::vector<bool> pred_bin, gold_bin;
    std::vector<std::set<std::size_t>> pred_sets, gold_sets;
    for (const auto& conv : test) {
        auto p = predict(*ckpt.classifier, ckpt.task, conv, task, threshold);
        rows.push_back(to_json(p, conv.id));
        if (task == TaskKind::Binary) {
            pred_bin.push_back(p.positive);
            gold_bin.push_back(*conv.binary_label);
        } else {
            pred_sets.push_back(p.labels);
            gold_sets.push_back(label_set(task_targets(conv, task)));
        }
    }
    write_jsonl(ctx.run_dir / "predictions.jsonl", rows);
    auto report = task == TaskKind::Binary ? binary_metrics(pred_bin, gold_bin) : multilabel_metrics(pred_sets, gold_sets, task);
    report.config_hash = ctx.config.hash;
    emit_report(report, ctx.run_dir / "metrics.json");
    ctx.out << render_table(report);
    if (dropped > 0) ctx.out << "unlabeled test items skipped: " << dropped << "\n";
    ctx.out << "run: " << ctx.run_dir.string() << "\n";
    return 0;
}

int cmd_baseline(Context& ctx, bool few_shot) {
    const auto b = ctx.section("baseline");
    BaselineOptions opts;
    opts.sampling.temperature = b.value("temperature", 0.0);
    opts.sampling.max_new_tokens = b.value("max_new_tokens", 512);
    const std::uint64_t seed = b.value("seed", ctx.config.seed());
    opts.sampling.seed = seed;
    opts.retry.retry_limit = b.value("retry_limit", opts.retry.retry_limit);
    opts.retry.base_backoff = std::chrono::milliseconds(b.value("backoff_ms", opts.retry.base_backoff.count()));
    opts.think_delimiter = b.value("think_delimiter", opts.think_delimiter);

    auto data = load_data(ctx);
    std::size_t dropped = 0, pool_dropped = 0;
    auto test = with_binary_label(data.split.test, dropped);
    auto pool = with_binary_label(data.split.train, pool_dropped);
    if (test.empty()) throw Error(Errc::EmptyDataset, "test split has no labeled conversations");
    auto client = make_client(ctx);
    start_run(ctx);

    struct Row {
        BaselineAnswer answer;
        std::vector<std::string> exemplars;
    };
    std::function<Row(std::size_t)> task = [&](std::size_t i) -> Row {
        if (!few_shot) return {zero_shot_classify(*client, test[i], opts), {}};
        auto r = few_shot_classify(*client, test[i], pool, seed + i, opts);
        return {std::move(r.answer), std::move(r.exemplar_ids)};
    };
    auto answers = run_bounded<Row>(*client, test.size(), task);

    std::vector<json> rows;
    std::vector<bool> preds, golds;
    std::size_t abstained = 0;
    for (std::size_t i = 0; i < test.size(); ++i) {
        const bool gold = *test[i].binary_label;
        const auto& a = answers[i].answer;
        json row{{"conversation_id", test[i].id},
                 {"task", "binary"},
                 {"answer", yes_no_name(a.answer)},
                 {"gold", gold},
                 {"raw_text", a.raw_text}};
        if (few_shot) {
            row["exemplar_ids"] = answers[i].exemplars;
            ctx.out << "query " << test[i].id << ": exemplars";
            for (const auto& id : answers[i].exemplars) ctx.out << " " << id;
            ctx.out << "\n";
        }
        rows.push_back(std::move(row));
        if (a.answer == YesNo::Abstain) ++abstained;
        // an abstention is scored as the wrong answer
        preds.push_back(a.answer == YesNo::Abstain ? !gold : a.answer == YesNo::Yes);
        golds.push_back(gold);
    }
    write_jsonl(ctx.run_dir / "predictions.jsonl", rows);
    auto report = binary_metrics(preds, golds);
    report.config_hash = ctx.config.hash;
    emit_report(report, ctx.run_dir / "metrics.json");
    ctx.out << "model: " << client->identity() << "\n";
    ctx.out << render_table(report);
    ctx.out << "abstentions: " << abstained << "\n";
    ctx.out << "run: " << ctx.run_dir.string() << "\n";
    return 0;
}

int cmd_explain(Context& ctx) {
    if (ctx.opts.dialogue.empty()) throw Error(Errc::ConfigError, "explain needs --dialogue");
    const fs::path dialogue_path = ctx.opts.dialogue;
    auto conv = parse_dialogue(read_file(dialogue_path), dialogue_path.stem().string());

    std::unique_ptr<ChatModelClient> client;
    std::shared_ptr<DecoderModel> model;
    std::unique_ptr<TextGenerator> generator;
    if (!ctx.opts.mock_client.empty()) {
        client = make_client(ctx);
        generator = std::make_unique<ClientGenerator>(*client);
    } else {
        model = load_phase1(checkpoint_path(ctx, "/explain/checkpoint")).model;
        generator = std::make_unique<ModelGenerator>(*model, ctx.section("explain").value("max_new_tokens", 96));
    }
    start_run(ctx);
    auto ex = explain(*generator, conv);

    const LineLabelSet flagged = ex.parsed.lines.value_or(LineLabelSet{});
    for (const auto& t : conv.turns) {
        ctx.out << (flagged.contains(t.index) ? ">> " : "   ") << "Line_" << t.index << ": " << speaker_name(t.speaker) << ": "
                << t.text << "\n";
    }
    ctx.out << "\nflagged: " << flagged.serialize() << "\n";
    ctx.out << "model output:\n" << ex.raw_text << "\n";
    for (const auto& w : ex.parsed.warnings) ctx.err << "warning: " << w << "\n";
    if (!ex.parsed.ok()) ctx.err << "warning: no line references found in the model output\n";

    json record{{"conversation_id", conv.id},
                {"prompt", ex.prompt},
                {"raw_text", ex.raw_text},
                {"flagged", ex.parsed.ok() ? json(flagged.lines()) : json(nullptr)},
                {"warnings", ex.parsed.warnings}};
    write_file(ctx.run_dir / "explanation.json", record.dump(2) + "\n");
    return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Detect manipulation in dialogues: augmentation, adapter training, evaluation."};
    app.name("imm");
    app.require_subcommand(1);
    Options opts;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", opts.config, "JSON config file")->required();
        sub->add_option("--out", opts.out, "Output directory (run-NNN subdirectories are created)");
        sub->add_option("--seed", opts.seed, "Override every seed in the config");
        sub->add_option("--mock-client", opts.mock_client, "Scripted replies file used instead of the HTTP backend");
        return sub;
    };
    std::vector<std::pair<CLI::App*, std::function<int(Context&)>>> commands;
    auto add = [&](const char* name, const char* help, std::function<int(Context&)> fn) {
        auto* sub = add_common(app.add_subcommand(name, help));
        commands.emplace_back(sub, std::move(fn));
        return sub;
    };
    add("ingest", "Validate the dataset and write the train/val/test split", cmd_ingest);
    add("augment", "Label manipulative lines of the training split with a reasoning model", cmd_augment);
    add("train-sft", "Phase 1: instruction-tune an adapter on augmented line labels", cmd_train_sft);
    add("train-cls", "Phase 2: train a second adapter and a classification head", cmd_train_cls)
        ->add_option("--checkpoint", opts.checkpoint, "Phase-1 checkpoint directory");
    add("eval", "Score a phase-2 checkpoint on the test split", cmd_eval)
        ->add_option("--checkpoint", opts.checkpoint, "Phase-2 checkpoint directory");
    add("baseline-zeroshot", "Yes/no prompting without exemplars", [](Context& c) { return cmd_baseline(c, false); });
    add("baseline-fewshot", "Yes/no prompting with two positive and two negative exemplars",
        [](Context& c) { return cmd_baseline(c, true); });
    auto* ex = add("explain", "Ask a phase-1 model which lines are manipulative", cmd_explain);
    ex->add_option("--dialogue", opts.dialogue, "Dialogue file, one 'Person1: ...' turn per line")->required();
    ex->add_option("--checkpoint", opts.checkpoint, "Phase-1 checkpoint directory");

    std::vector<const char*> argv{"imm"};
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err);
    }

    try {
        for (auto& [sub, fn] : commands) {
            if (!sub->parsed()) continue;
            Context ctx{load_config(opts.config, opts.seed), opts, {}, out, err};
            return fn(ctx);
        }
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}

}  // namespace imm::cli
