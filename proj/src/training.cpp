#include "imm/training.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>
#include <sstream>

#include "imm/error.hpp"
#include "imm/rng.hpp"
#include "imm/templates.hpp"
#include "imm/tokenizer.hpp"

namespace imm {

using nlohmann::json;

double TrainConfig::resolved_scale() const { return scale.value_or(2.0 / static_cast<double>(rank)); }

AdapterSpec TrainConfig::adapter_spec() const {
    return AdapterSpec{rank, resolved_scale(), target_pattern, seed, init_std};
}

void TrainConfig::validate() const {
    if (!(learning_rate > 0) || epochs <= 0 || batch_size <= 0 || rank == 0 || max_sequence_length <= 3 ||
        !(resolved_scale() > 0) || grad_clip < 0)
        throw Error(Errc::ConfigError, "training settings must be positive");
}

json to_json(const TrainConfig& c) {
    return json{{"learning_rate", c.learning_rate},
                {"epochs", c.epochs},
                {"batch_size", c.batch_size},
                {"rank", c.rank},
                {"scale", c.resolved_scale()},
                {"seed", c.seed},
                {"max_sequence_length", c.max_sequence_length},
                {"target_pattern", c.target_pattern},
                {"init_std", c.init_std},
                {"grad_clip", c.grad_clip}};
}

TrainConfig train_config_from_json(const json& j) {
    TrainConfig c;
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.rank = j.value("rank", c.rank);
    if (j.contains("scale") && !j["scale"].is_null()) c.scale = j["scale"].get<double>();
    c.seed = j.value("seed", c.seed);
    c.max_sequence_length = j.value("max_sequence_length", c.max_sequence_length);
    c.target_pattern = j.value("target_pattern", c.target_pattern);
    c.init_std = j.value("init_std", c.init_std);
    c.grad_clip = j.value("grad_clip", c.grad_clip);
    c.validate();
    return c;
}

Adam::Adam(std::vector<ag::Var> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& p : params_) {
        m_.emplace_back(p->value.rows(), p->value.cols());
        v_.emplace_back(p->value.rows(), p->value.cols());
    }
}

double Adam::step(double grad_scale, double clip_norm) {
    double sq = 0.0;
    for (const auto& p : params_)
        for (double g : p->grad.flat()) sq += (g * grad_scale) * (g * grad_scale);
    const double norm = std::sqrt(sq);
    const double clip = (clip_norm > 0 && norm > clip_norm) ? clip_norm / norm : 1.0;
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto& p = *params_[i];
        if (p.grad.empty()) continue;
        auto w = p.value.flat();
        auto g = p.grad.flat();
        auto m = m_[i].flat();
        auto v = v_[i].flat();
        for (std::size_t j = 0; j < w.size(); ++j) {
            const double gj = g[j] * grad_scale * clip;
            m[j] = beta1_ * m[j] + (1.0 - beta1_) * gj;
            v[j] = beta2_ * v[j] + (1.0 - beta2_) * gj * gj;
            w[j] -= lr_ * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + eps_);
        }
    }
    return norm;
}

void Adam::zero_grad() {
    for (auto& p : params_) p->grad.fill(0.0);
}

InstructionSample make_instruction_sample(const AugmentedExample& example, int max_sequence_length) {
    InstructionSample s;
    s.prompt_text = example.prompt();
    s.target_text = example.target;
    auto prompt = ByteTokenizer::encode(s.prompt_text);
    const auto target = ByteTokenizer::encode(s.target_text);
    const std::size_t fixed = target.size() + 3;
    if (fixed > static_cast<std::size_t>(max_sequence_length))
        throw Error(Errc::InvalidArgument, "target of example '" + example.conversation_id +
                                               "' does not fit in the sequence length");
    const std::size_t room = static_cast<std::size_t>(max_sequence_length) - fixed;
    if (prompt.size() > room) prompt.erase(prompt.begin(), prompt.end() - static_cast<std::ptrdiff_t>(room));
    s.tokens.push_back(ByteTokenizer::kBos);
    s.tokens.insert(s.tokens.end(), prompt.begin(), prompt.end());
    s.tokens.push_back(ByteTokenizer::kSep);
    s.loss_mask.assign(s.tokens.size(), false);
    s.tokens.insert(s.tokens.end(), target.begin(), target.end());
    s.tokens.push_back(ByteTokenizer::kEos);
    s.loss_mask.resize(s.tokens.size(), true);
    return s;
}

ag::Var masked_lm_loss(const DecoderModel& model, std::span<const int> inputs, std::span<const int> targets,
                       const std::vector<bool>& mask) {
    if (inputs.size() != targets.size() || inputs.size() != mask.size())
        throw Error(Errc::LengthMismatch, "inputs, targets and mask must align");
    // Only masked positions reach the LM head.
    std::vector<int> rows, selected;
    for (std::size_t i = 0; i < mask.size(); ++i)
        if (mask[i]) {
            rows.push_back(static_cast<int>(i));
            selected.push_back(targets[i]);
        }
    if (rows.empty()) throw Error(Errc::InvalidArgument, "loss mask selects no tokens");
    const ag::Var hidden = model.forward_hidden(inputs);
    const ag::Var logits = model.lm_logits(ag::gather_rows(hidden, rows));
    return ag::masked_cross_entropy(logits, selected, std::vector<bool>(rows.size(), true));
}

ag::Var sample_loss(const DecoderModel& model, const InstructionSample& sample) {
    const std::size_t n = sample.tokens.size();
    const std::span<const int> tokens(sample.tokens);
    const std::vector<bool> mask(sample.loss_mask.begin() + 1, sample.loss_mask.end());
    return masked_lm_loss(model, tokens.first(n - 1), tokens.subspan(1), mask);
}

double mean_masked_loss(const DecoderModel& model, std::span<const InstructionSample> samples) {
    if (samples.empty()) throw Error(Errc::EmptyDataset, "no samples to evaluate");
    double total = 0.0;
    for (const auto& s : samples) total += sample_loss(model, s)->value(0, 0);
    return total / static_cast<double>(samples.size());
}

std::string loss_log_csv(std::span<const LossEntry> log) {
    std::ostringstream out;
    out.precision(17);
    out << "step,epoch,loss\n";
    for (const auto& e : log) out << e.step << ',' << e.epoch << ',' << e.loss << '\n';
    return out.str();
}

namespace {

std::vector<ag::Var> vars_of(const std::vector<NamedParam>& params) {
    std::vector<ag::Var> out;
    for (const auto& p : params) out.push_back(p.var);
    return out;
}

void check_finite(double loss, int epoch, int step, std::string_view what) {
    if (!std::isfinite(loss))
        throw Error(Errc::NonFiniteLoss, std::string(what) + " loss became " + std::to_string(loss) + " at epoch " +
                                             std::to_string(epoch) + ", step " + std::to_string(step));
}

// Shared mini-batch loop: shuffles indices each epoch, accumulates per-sample
// gradients, and takes one optimizer step per batch.
template <class LossFn>
void run_epochs(std::size_t n_items, const TrainConfig& cfg, Adam& opt, PhaseReport& report, LossFn&& loss_of,
                std::string_view what, const ProgressFn& progress) {
    Rng rng(cfg.seed ^ 0x5eedf00dULL);
    std::vector<std::size_t> order(n_items);
    std::iota(order.begin(), order.end(), std::size_t{0});
    int step = 0;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        rng.shuffle(order);
        double epoch_total = 0.0;
        for (std::size_t start = 0; start < n_items; start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end = std::min(n_items, start + static_cast<std::size_t>(cfg.batch_size));
            opt.zero_grad();
            double batch_total = 0.0;
            for (std::size_t i = start; i < end; ++i) {
                const ag::Var loss = loss_of(order[i]);
                const double value = loss->value(0, 0);
                check_finite(value, epoch, step + 1, what);
                ag::backward(loss);
                batch_total += value;
            }
            const double count = static_cast<double>(end - start);
            opt.step(1.0 / count, cfg.grad_clip);
            ++step;
            LossEntry entry{step, epoch, batch_total / count};
            report.log.push_back(entry);
            if (progress) progress(entry);
            epoch_total += batch_total;
        }
        report.epoch_loss.push_back(epoch_total / static_cast<double>(n_items));
    }
}

}  // namespace

PhaseReport train_instruction_phase(DecoderModel& model, const std::vector<AugmentedExample>& examples,
                                    const TrainConfig& cfg, const ProgressFn& progress) {
    cfg.validate();
    if (examples.empty()) throw Error(Errc::EmptyDataset, "instruction phase needs at least one example");
    const int max_len = std::min(cfg.max_sequence_length, model.config().max_seq);
    std::vector<InstructionSample> samples;
    for (const auto& ex : examples) samples.push_back(make_instruction_sample(ex, max_len));

    PhaseReport report;
    report.adapter_set = model.add_adapter_set(cfg.adapter_spec());
    model.set_trainable_sets({report.adapter_set});
    report.initial_loss = mean_masked_loss(model, samples);
    check_finite(report.initial_loss, 0, 0, "instruction");

    Adam opt(vars_of(model.adapter_parameters(report.adapter_set)), cfg.learning_rate);
    run_epochs(samples.size(), cfg, opt, report, [&](std::size_t i) { return sample_loss(model, samples[i]); },
               "instruction", progress);
    opt.zero_grad();
    report.final_loss = mean_masked_loss(model, samples);
    return report;
}

std::vector<int> classification_tokens(const Conversation& conv, int max_sequence_length) {
    auto body = ByteTokenizer::encode(format_plain(conv));
    const std::size_t room = static_cast<std::size_t>(std::max(max_sequence_length - 2, 1));
    if (body.size() > room) body.erase(body.begin(), body.end() - static_cast<std::ptrdiff_t>(room));
    std::vector<int> tokens{ByteTokenizer::kBos};
    tokens.insert(tokens.end(), body.begin(), body.end());
    tokens.push_back(ByteTokenizer::kEos);
    return tokens;
}

std::vector<double> task_targets(const Conversation& conv, TaskKind task) {
    if (!conv.binary_label)
        throw Error(Errc::LabelMissing, "conversation '" + conv.id + "' has no manipulation label");
    switch (task) {
        case TaskKind::Binary: return {*conv.binary_label ? 1.0 : 0.0};
        case TaskKind::TechniqueMultilabel: {
            std::vector<double> y(kTechniqueCount, 0.0);
            for (auto t : conv.techniques) y[static_cast<std::size_t>(t)] = 1.0;
            return y;
        }
        case TaskKind::VulnerabilityMultilabel: {
            std::vector<double> y(kVulnerabilityCount, 0.0);
            for (auto v : conv.vulnerabilities) y[static_cast<std::size_t>(v)] = 1.0;
            return y;
        }
    }
    return {};
}

ClassificationPhase train_classification_phase(std::shared_ptr<DecoderModel> phase1_model,
                                               const std::vector<Conversation>& data, TaskKind task,
                                               const TrainConfig& cfg, Pooling pooling, const ProgressFn& progress) {
    cfg.validate();
    if (!phase1_model || phase1_model->adapter_set_count() == 0)
        throw Error(Errc::MissingCheckpoint, "classification phase needs a model carrying the phase-1 adapter");
    if (data.empty()) throw Error(Errc::EmptyDataset, "classification phase needs at least one conversation");

    const int max_len = std::min(cfg.max_sequence_length, phase1_model->config().max_seq);
    std::vector<std::vector<int>> inputs;
    std::vector<std::vector<double>> targets;
    for (const auto& conv : data) {
        targets.push_back(task_targets(conv, task));
        inputs.push_back(classification_tokens(conv, max_len));
    }

    phase1_model->set_trainable_sets({});
    AdapterSpec spec = cfg.adapter_spec();
    spec.seed = cfg.seed + 1;
    const std::size_t set = phase1_model->add_adapter_set(spec);
    auto head = ClassificationHead::init(static_cast<std::size_t>(phase1_model->config().d_model),
                                         label_dimension(task), cfg.seed + 2);
    ClassificationPhase out{attach_classifier(phase1_model, std::move(head), pooling), task, {}, 0.0};
    out.report.adapter_set = set;

    auto loss_of = [&](std::size_t i) { return ag::bce_with_logits(out.classifier.logits(inputs[i]), targets[i]); };
    auto dataset_loss = [&] {
        double total = 0.0;
        for (std::size_t i = 0; i < inputs.size(); ++i) total += loss_of(i)->value(0, 0);
        return total / static_cast<double>(inputs.size());
    };
    out.report.initial_loss = dataset_loss();
    check_finite(out.report.initial_loss, 0, 0, "classification");

    Adam opt(vars_of(out.classifier.trainable_parameters()), cfg.learning_rate);
    run_epochs(inputs.size(), cfg, opt, out.report, loss_of, "classification", progress);
    opt.zero_grad();
    out.report.final_loss = dataset_loss();

    std::size_t correct = 0;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        const auto logits = out.classifier.logits(inputs[i]);
        const auto pred = decide(logits->value.flat(), task);
        bool match = true;
        for (std::size_t j = 0; j < targets[i].size(); ++j)
            match = match && (pred.labels.contains(j) == (targets[i][j] > 0.5));
        correct += match ? 1 : 0;
    }
    out.train_accuracy = static_cast<double>(correct) / static_cast<double>(inputs.size());
    return out;
}

Prediction decide(std::span<const double> logits, TaskKind task, double threshold) {
    if (logits.size() != label_dimension(task))
        throw Error(Errc::DimensionMismatch, "expected " + std::to_string(label_dimension(task)) + " logits");
    Prediction p;
    p.task = task;
    for (std::size_t j = 0; j < logits.size(); ++j) {
        const double z = logits[j];
        const double s = z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
        p.scores.push_back(s);
        if (s > threshold) p.labels.insert(j);
    }
    p.positive = !p.labels.empty();
    return p;
}

Prediction predict(const SequenceClassifier& classifier, TaskKind trained_task, const Conversation& conv,
                   TaskKind task, double threshold) {
    if (trained_task != task)
        throw Error(Errc::TaskMismatch, "checkpoint was trained for " + std::string(task_name(trained_task)) +
                                            ", asked for " + std::string(task_name(task)));
    const auto tokens = classification_tokens(conv, classifier.backbone().config().max_seq);
    const auto logits = classifier.logits(tokens);
    return decide(logits->value.flat(), task, threshold);
}

json to_json(const Prediction& p, std::string_view conversation_id) {
    json scores = json::object();
    for (std::size_t j = 0; j < p.scores.size(); ++j) scores[std::string(task_label_name(p.task, j))] = p.scores[j];
    json prediction;
    if (p.task == TaskKind::Binary) {
        prediction = p.positive;
    } else {
        prediction = json::array();
        for (auto j : p.labels) prediction.push_back(task_label_name(p.task, j));
    }
    return json{{"conversation_id", conversation_id},
                {"task", task_name(p.task)},
                {"prediction", prediction},
                {"scores", scores}};
}

ModelGenerator::ModelGenerator(const DecoderModel& model, int max_new_tokens)
    : model_(model), max_new_tokens_(max_new_tokens) {}

std::string ModelGenerator::generate(const std::string& prompt) {
    const std::size_t window = static_cast<std::size_t>(model_.config().max_seq);
    std::vector<int> context{ByteTokenizer::kBos};
    const auto body = ByteTokenizer::encode(prompt);
    context.insert(context.end(), body.begin(), body.end());
    context.push_back(ByteTokenizer::kSep);
    std::vector<int> generated;
    for (int step = 0; step < max_new_tokens_; ++step) {
        std::span<const int> view(context);
        if (view.size() > window) view = view.last(window);
        const auto hidden = model_.forward_hidden(view);
        const auto logits = model_.lm_logits(ag::select_row(hidden, hidden->value.rows() - 1));
        const auto row = logits->value.row(0);
        const int next = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
        if (next == ByteTokenizer::kEos) break;
        generated.push_back(next);
        context.push_back(next);
    }
    return ByteTokenizer::decode(generated);
}

std::string ClientGenerator::generate(const std::string& prompt) {
    SamplingParams greedy;
    greedy.temperature = 0.0;
    greedy.max_new_tokens = 512;
    greedy.seed = 0;
    return client_.complete(prompt, greedy);
}

std::string build_explain_prompt(const Conversation& conv) {
    return templates::render(templates::explain_prompt(), {{"dialogue", format_with_lines(conv)}});
}

LineParse parse_explanation(std::string_view raw, int max_line) {
    const auto answer = strip_thinking(raw);
    auto parsed = parse_line_response(answer, max_line);
    if (parsed.ok()) return parsed;
    const auto b = answer.find_first_not_of(" \t\r\n\"'");
    if (b != std::string_view::npos && answer.size() - b >= 4) {
        std::string head(answer.substr(b, 4));
        for (auto& c : head) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        const bool word_end = answer.size() - b == 4 || !std::isalnum(static_cast<unsigned char>(answer[b + 4]));
        if (head == "none" && word_end) parsed.lines = LineLabelSet{};
    }
    return parsed;
}

Explanation explain(TextGenerator& generator, const Conversation& conv) {
    Explanation e;
    e.prompt = build_explain_prompt(conv);
    e.raw_text = generator.generate(e.prompt);
    e.parsed = parse_explanation(e.raw_text, static_cast<int>(conv.turn_count()));
    return e;
}

}  // namespace imm
