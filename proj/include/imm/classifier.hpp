#pragma once

#include <memory>
#include <span>
#include <string_view>
#include <vector>

#include "imm/model.hpp"

namespace imm {

enum class Pooling { LastToken, Mean };

std::string_view pooling_name(Pooling p) noexcept;
Pooling pooling_from_name(std::string_view name);

struct ClassificationHead {
    ag::Var weight;  // hidden×L
    ag::Var bias;    // 1×L

    std::size_t hidden() const noexcept { return weight->value.rows(); }
    std::size_t labels() const noexcept { return weight->value.cols(); }

    // Small random weights, zero bias; trainable.
    static ClassificationHead init(std::size_t hidden, std::size_t labels, std::uint64_t seed, double stddev = 0.02);
    static ClassificationHead from_values(MatrixD weight, MatrixD bias);
};

// Backbone with its LM head bypassed: logits = head(pool(final hidden states)).
class SequenceClassifier {
public:
    SequenceClassifier(std::shared_ptr<DecoderModel> backbone, ClassificationHead head, Pooling pooling);

    ag::Var logits(std::span<const int> tokens) const;                 // 1×L
    MatrixD logits_batch(const std::vector<std::vector<int>>& batch) const;  // batch×L

    DecoderModel& backbone() noexcept { return *backbone_; }
    const DecoderModel& backbone() const noexcept { return *backbone_; }
    std::shared_ptr<DecoderModel> backbone_ptr() const noexcept { return backbone_; }
    const ClassificationHead& head() const noexcept { return head_; }
    Pooling pooling() const noexcept { return pooling_; }

    std::vector<NamedParam> head_parameters() const;
    // Last adapter set plus the head.
    std::vector<NamedParam> trainable_parameters() const;

private:
    std::shared_ptr<DecoderModel> backbone_;
    ClassificationHead head_;
    Pooling pooling_;
};

// Validates the head against the backbone width (HiddenSizeMismatch) and
// freezes everything except the most recent adapter set and the head.
SequenceClassifier attach_classifier(std::shared_ptr<DecoderModel> backbone, ClassificationHead head, Pooling pooling);

}  // namespace imm
