#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "imm/augment.hpp"
#include "imm/classifier.hpp"
#include "imm/corpus.hpp"
#include "imm/model.hpp"

namespace imm {

struct TrainConfig {
    double learning_rate = 2e-4;
    int epochs = 3;
    int batch_size = 8;
    std::size_t rank = 16;
    std::optional<double> scale;  // defaults to 2/rank
    std::uint64_t seed = 0;
    int max_sequence_length = 512;
    std::string target_pattern = R"(attn\.(q|k|v|o)$)";
    double init_std = 0.02;
    double grad_clip = 1.0;  // global L2 norm; 0 disables

    double resolved_scale() const;
    AdapterSpec adapter_spec() const;
    void validate() const;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

class Adam {
public:
    Adam(std::vector<ag::Var> params, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

    // Applies one update using the accumulated gradients times `grad_scale`,
    // optionally clipped to a global norm. Returns the pre-clip gradient norm.
    double step(double grad_scale, double clip_norm);
    void zero_grad();

private:
    std::vector<ag::Var> params_;
    std::vector<MatrixD> m_, v_;
    double lr_, beta1_, beta2_, eps_;
    long long t_ = 0;
};

// Token sequence for one phase-1 example: BOS, prompt, SEP, target, EOS.
// loss_mask is set exactly on the target and EOS tokens.
struct InstructionSample {
    std::string prompt_text;
    std::string target_text;
    std::vector<int> tokens;
    std::vector<bool> loss_mask;
};

// Long prompts lose tokens from the front; the target is never truncated.
InstructionSample make_instruction_sample(const AugmentedExample& example, int max_sequence_length);

// Mean next-token cross-entropy of `targets` (aligned with `inputs`), restricted
// to rows with mask set.
ag::Var masked_lm_loss(const DecoderModel& model, std::span<const int> inputs, std::span<const int> targets,
                       const std::vector<bool>& mask);
ag::Var sample_loss(const DecoderModel& model, const InstructionSample& sample);
double mean_masked_loss(const DecoderModel& model, std::span<const InstructionSample> samples);

struct LossEntry {
    int step = 0;
    int epoch = 0;
    double loss = 0.0;
};

struct PhaseReport {
    std::vector<LossEntry> log;          // one entry per optimizer step
    std::vector<double> epoch_loss;      // mean training loss per epoch
    double initial_loss = 0.0;           // full-dataset loss before any update
    double final_loss = 0.0;             // full-dataset loss after training
    std::size_t adapter_set = 0;
};

std::string loss_log_csv(std::span<const LossEntry> log);

using ProgressFn = std::function<void(const LossEntry&)>;

// Attaches a fresh adapter set to `model` and trains only that set on the
// masked next-token objective. Base weights stay frozen.
PhaseReport train_instruction_phase(DecoderModel& model, const std::vector<AugmentedExample>& examples,
                                    const TrainConfig& cfg, const ProgressFn& progress = {});

// Classifier input: BOS, plain dialogue bytes, EOS; long dialogues lose their start.
std::vector<int> classification_tokens(const Conversation& conv, int max_sequence_length);

// Label vector for the task: one entry for binary, 11 or 5 multi-hot entries otherwise.
// Throws LabelMissing when the conversation lacks the required annotation.
std::vector<double> task_targets(const Conversation& conv, TaskKind task);

struct ClassificationPhase {
    SequenceClassifier classifier;
    TaskKind task;
    PhaseReport report;
    double train_accuracy = 0.0;  // exact-match on the training data after the last epoch
};

// Freezes the phase-1 model, attaches a second adapter set and a new head,
// and trains those two on sigmoid cross-entropy.
ClassificationPhase train_classification_phase(std::shared_ptr<DecoderModel> phase1_model,
                                               const std::vector<Conversation>& data, TaskKind task,
                                               const TrainConfig& cfg, Pooling pooling = Pooling::LastToken,
                                               const ProgressFn& progress = {});

struct Prediction {
    TaskKind task = TaskKind::Binary;
    bool positive = false;             // binary decision (or "any label" for multi-label)
    std::set<std::size_t> labels;      // label indices above threshold
    std::vector<double> scores;        // sigmoid probability per label
};

// sigmoid(logit) > threshold, strictly.
Prediction decide(std::span<const double> logits, TaskKind task, double threshold = 0.5);

Prediction predict(const SequenceClassifier& classifier, TaskKind trained_task, const Conversation& conv,
                   TaskKind task, double threshold = 0.5);

nlohmann::json to_json(const Prediction& p, std::string_view conversation_id);

// Greedy text generation for the explain mode.
class TextGenerator {
public:
    virtual ~TextGenerator() = default;
    virtual std::string generate(const std::string& prompt) = 0;
};

class ModelGenerator final : public TextGenerator {
public:
    ModelGenerator(const DecoderModel& model, int max_new_tokens = 96);
    std::string generate(const std::string& prompt) override;

private:
    const DecoderModel& model_;
    int max_new_tokens_;
};

// Wraps a chat backend at temperature 0.
class ClientGenerator final : public TextGenerator {
public:
    explicit ClientGenerator(ChatModelClient& client) : client_(client) {}
    std::string generate(const std::string& prompt) override;

private:
    ChatModelClient& client_;
};

std::string build_explain_prompt(const Conversation& conv);

// Like parse_line_response, but a reply that starts with "None" is the empty set.
LineParse parse_explanation(std::string_view raw, int max_line);

struct Explanation {
    std::string prompt;
    std::string raw_text;
    LineParse parsed;
};

Explanation explain(TextGenerator& generator, const Conversation& conv);

}  // namespace imm
