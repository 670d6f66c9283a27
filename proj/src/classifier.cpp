#include "imm/classifier.hpp"

#include "imm/error.hpp"
#include "imm/rng.hpp"

namespace imm {

std::string_view pooling_name(Pooling p) noexcept { return p == Pooling::LastToken ? "last_token" : "mean"; }

Pooling pooling_from_name(std::string_view name) {
    if (name == "last_token") return Pooling::LastToken;
    if (name == "mean") return Pooling::Mean;
    throw Error(Errc::ConfigError, "unknown pooling '" + std::string(name) + "'");
}

ClassificationHead ClassificationHead::init(std::size_t hidden, std::size_t labels, std::uint64_t seed, double stddev) {
    Rng rng(seed);
    MatrixD w(hidden, labels);
    for (auto& v : w.flat()) v = rng.normal(0.0, stddev);
    return {ag::leaf(std::move(w), true), ag::leaf(MatrixD(1, labels), true)};
}

ClassificationHead ClassificationHead::from_values(MatrixD weight, MatrixD bias) {
    if (bias.rows() != 1 || bias.cols() != weight.cols())
        throw Error(Errc::DimensionMismatch, "head bias must be 1×L");
    return {ag::leaf(std::move(weight), true), ag::leaf(std::move(bias), true)};
}

SequenceClassifier::SequenceClassifier(std::shared_ptr<DecoderModel> backbone, ClassificationHead head, Pooling pooling)
    : backbone_(std::move(backbone)), head_(std::move(head)), pooling_(pooling) {
    if (!backbone_) throw Error(Errc::InvalidArgument, "classifier needs a backbone");
    if (head_.hidden() != static_cast<std::size_t>(backbone_->config().d_model))
        throw Error(Errc::HiddenSizeMismatch, "head expects hidden size " + std::to_string(head_.hidden()) +
                                                  ", backbone has " + std::to_string(backbone_->config().d_model));
}

ag::Var SequenceClassifier::logits(std::span<const int> tokens) const {
    const ag::Var hidden = backbone_->forward_hidden(tokens);
    const ag::Var pooled =
        pooling_ == Pooling::LastToken ? ag::select_row(hidden, hidden->value.rows() - 1) : ag::mean_rows(hidden);
    return ag::add_row(ag::matmul(pooled, head_.weight), head_.bias);
}

MatrixD SequenceClassifier::logits_batch(const std::vector<std::vector<int>>& batch) const {
    MatrixD out(batch.size(), head_.labels());
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto row = logits(batch[i]);
        std::copy(row->value.row(0).begin(), row->value.row(0).end(), out.row(i).begin());
    }
    return out;
}

std::vector<NamedParam> SequenceClassifier::head_parameters() const {
    return {{"head.weight", head_.weight}, {"head.bias", head_.bias}};
}

std::vector<NamedParam> SequenceClassifier::trainable_parameters() const {
    std::vector<NamedParam> out;
    if (backbone_->adapter_set_count() > 0) out = backbone_->adapter_parameters(backbone_->adapter_set_count() - 1);
    for (auto& p : head_parameters()) out.push_back(p);
    return out;
}

SequenceClassifier attach_classifier(std::shared_ptr<DecoderModel> backbone, ClassificationHead head, Pooling pooling) {
    SequenceClassifier clf(std::move(backbone), std::move(head), pooling);
    auto& model = clf.backbone();
    if (model.adapter_set_count() > 0) model.set_trainable_sets({model.adapter_set_count() - 1});
    clf.head().weight->requires_grad = true;
    clf.head().bias->requires_grad = true;
    return clf;
}

}  // namespace imm
