#include "imm/model.hpp"

#include <cmath>
#include <regex>

#include "imm/error.hpp"
#include "imm/hash.hpp"
#include "imm/rng.hpp"

namespace imm {

using nlohmann::json;

void BackboneConfig::validate() const {
    if (vocab_size < ByteTokenizer::kVocabSize || d_model <= 0 || n_layers <= 0 || n_heads <= 0 || d_ff <= 0 ||
        max_seq <= 1)
        throw Error(Errc::ConfigError, "backbone dimensions must be positive and cover the byte vocabulary");
    if (d_model % n_heads != 0) throw Error(Errc::ConfigError, "d_model must be divisible by n_heads");
}

std::size_t BackboneConfig::parameter_count() const {
    const std::size_t d = d_model, f = d_ff, v = vocab_size, t = max_seq;
    const std::size_t per_layer = 4 * d * d + 2 * d * f + 2 * d;
    return v * d + t * d + n_layers * per_layer + d + d * v;
}

json to_json(const BackboneConfig& c) {
    return json{{"vocab_size", c.vocab_size}, {"d_model", c.d_model}, {"n_layers", c.n_layers},
                {"n_heads", c.n_heads},       {"d_ff", c.d_ff},       {"max_seq", c.max_seq},
                {"seed", c.seed}};
}

BackboneConfig backbone_from_json(const json& j) {
    BackboneConfig c;
    c.vocab_size = j.value("vocab_size", c.vocab_size);
    c.d_model = j.value("d_model", c.d_model);
    c.n_layers = j.value("n_layers", c.n_layers);
    c.n_heads = j.value("n_heads", c.n_heads);
    c.d_ff = j.value("d_ff", c.d_ff);
    c.max_seq = j.value("max_seq", c.max_seq);
    c.seed = j.value("seed", c.seed);
    c.validate();
    return c;
}

json to_json(const AdapterSpec& s) {
    return json{{"rank", s.rank},
                {"scale", s.scale},
                {"target_pattern", s.target_pattern},
                {"seed", s.seed},
                {"init_std", s.init_std}};
}

AdapterSpec adapter_spec_from_json(const json& j) {
    AdapterSpec s;
    s.rank = j.value("rank", s.rank);
    s.scale = j.value("scale", s.scale);
    s.target_pattern = j.value("target_pattern", s.target_pattern);
    s.seed = j.value("seed", s.seed);
    s.init_std = j.value("init_std", s.init_std);
    return s;
}

namespace {

ag::Var random_param(Rng& rng, std::size_t rows, std::size_t cols, double stddev) {
    MatrixD m(rows, cols);
    for (auto& v : m.flat()) v = rng.normal(0.0, stddev);
    return ag::leaf(std::move(m), false);
}

ag::Var ones(std::size_t n) { return ag::leaf(MatrixD(1, n, 1.0), false); }

}  // namespace

DecoderModel::DecoderModel(const BackboneConfig& config) : config_(config) {
    config_.validate();
    Rng rng(config_.seed);
    const std::size_t d = config_.d_model, f = config_.d_ff;
    tok_emb_ = random_param(rng, config_.vocab_size, d, 1.0);
    pos_emb_ = random_param(rng, config_.max_seq, d, 0.1);
    const double std_d = 1.0 / std::sqrt(static_cast<double>(d));
    const double std_f = 1.0 / std::sqrt(static_cast<double>(f));
    for (int l = 0; l < config_.n_layers; ++l) {
        const std::string p = "layers." + std::to_string(l) + ".";
        Block b;
        b.attn_norm = ones(d);
        b.mlp_norm = ones(d);
        b.q = {p + "attn.q", random_param(rng, d, d, std_d), {}};
        b.k = {p + "attn.k", random_param(rng, d, d, std_d), {}};
        b.v = {p + "attn.v", random_param(rng, d, d, std_d), {}};
        b.o = {p + "attn.o", random_param(rng, d, d, std_d), {}};
        b.up = {p + "mlp.up", random_param(rng, d, f, std_d), {}};
        b.down = {p + "mlp.down", random_param(rng, f, d, std_f), {}};
        blocks_.push_back(std::move(b));
    }
    final_norm_ = ones(d);
    lm_head_ = {"lm_head", random_param(rng, d, config_.vocab_size, std_d), {}};
}

std::vector<DecoderModel::Linear*> DecoderModel::linears() {
    std::vector<Linear*> out;
    for (auto& b : blocks_)
        for (Linear* l : {&b.q, &b.k, &b.v, &b.o, &b.up, &b.down}) out.push_back(l);
    out.push_back(&lm_head_);
    return out;
}

std::vector<const DecoderModel::Linear*> DecoderModel::linears() const {
    std::vector<const Linear*> out;
    for (const auto& b : blocks_)
        for (const Linear* l : {&b.q, &b.k, &b.v, &b.o, &b.up, &b.down}) out.push_back(l);
    out.push_back(&lm_head_);
    return out;
}

std::vector<std::string> DecoderModel::linear_names() const {
    std::vector<std::string> out;
    for (const auto* l : linears()) out.push_back(l->name);
    return out;
}

std::size_t DecoderModel::add_adapter_set(const AdapterSpec& spec) {
    std::regex pattern;
    try {
        pattern = std::regex(spec.target_pattern);
    } catch (const std::regex_error& e) {
        throw Error(Errc::ConfigError, "invalid adapter target pattern '" + spec.target_pattern + "'");
    }
    const std::size_t set = specs_.size();
    Rng rng(spec.seed);
    std::size_t attached = 0;
    for (Linear* l : linears()) {
        if (!std::regex_search(l->name, pattern)) continue;
        const std::size_t d = l->weight->value.rows(), k = l->weight->value.cols();
        if (spec.rank == 0) throw Error(Errc::InvalidArgument, "adapter rank must be positive");
        if (spec.rank >= std::min(d, k))
            throw Error(Errc::RankTooLarge, "rank " + std::to_string(spec.rank) + " must be below min(d, k) = " +
                                                std::to_string(std::min(d, k)) + " for " + l->name);
        MatrixD a(d, spec.rank);
        for (auto& v : a.flat()) v = rng.normal(0.0, spec.init_std);
        l->adapters.push_back({set, ag::leaf(std::move(a), true), ag::leaf(MatrixD(spec.rank, k), true), spec.scale});
        ++attached;
    }
    if (attached == 0) throw Error(Errc::ConfigError, "adapter pattern '" + spec.target_pattern + "' matches no layer");
    specs_.push_back(spec);
    return set;
}

void DecoderModel::set_trainable_sets(const std::set<std::size_t>& sets) {
    for (Linear* l : linears())
        for (auto& slot : l->adapters) {
            const bool on = sets.contains(slot.set);
            slot.a->requires_grad = on;
            slot.b->requires_grad = on;
        }
}

ag::Var DecoderModel::Linear::forward(const ag::Var& x) const {
    ag::Var y = ag::matmul(x, weight);
    for (const auto& slot : adapters) y = ag::add(y, ag::scale(ag::matmul(ag::matmul(x, slot.a), slot.b), slot.scale));
    return y;
}

ag::Var DecoderModel::forward_hidden(std::span<const int> tokens) const {
    if (tokens.empty()) throw Error(Errc::InvalidArgument, "cannot run the model on an empty sequence");
    if (tokens.size() > static_cast<std::size_t>(config_.max_seq))
        throw Error(Errc::InvalidArgument, "sequence of " + std::to_string(tokens.size()) +
                                               " tokens exceeds max_seq " + std::to_string(config_.max_seq));
    std::vector<int> positions(tokens.size());
    for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = static_cast<int>(i);
    ag::Var x = ag::add(ag::gather_rows(tok_emb_, tokens), ag::gather_rows(pos_emb_, positions));

    const std::size_t heads = config_.n_heads;
    const std::size_t head_dim = config_.d_model / heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));
    for (const auto& b : blocks_) {
        const ag::Var h = ag::rmsnorm(x, b.attn_norm);
        const ag::Var q = b.q.forward(h), k = b.k.forward(h), v = b.v.forward(h);
        std::vector<ag::Var> outs;
        for (std::size_t hd = 0; hd < heads; ++hd) {
            const std::size_t off = hd * head_dim;
            const ag::Var scores = ag::scale(
                ag::matmul_nt(ag::slice_cols(q, off, head_dim), ag::slice_cols(k, off, head_dim)), inv_sqrt);
            outs.push_back(ag::matmul(ag::causal_softmax(scores), ag::slice_cols(v, off, head_dim)));
        }
        x = ag::add(x, b.o.forward(ag::concat_cols(outs)));
        x = ag::add(x, b.down.forward(ag::silu(b.up.forward(ag::rmsnorm(x, b.mlp_norm)))));
    }
    return ag::rmsnorm(x, final_norm_);
}

ag::Var DecoderModel::lm_logits(const ag::Var& hidden) const { return lm_head_.forward(hidden); }

std::vector<NamedParam> DecoderModel::base_parameters() const {
    std::vector<NamedParam> out{{"tok_emb", tok_emb_}, {"pos_emb", pos_emb_}};
    for (std::size_t l = 0; l < blocks_.size(); ++l) {
        const auto& b = blocks_[l];
        const std::string p = "layers." + std::to_string(l) + ".";
        out.push_back({p + "attn_norm", b.attn_norm});
        for (const Linear* lin : {&b.q, &b.k, &b.v, &b.o}) out.push_back({lin->name, lin->weight});
        out.push_back({p + "mlp_norm", b.mlp_norm});
        for (const Linear* lin : {&b.up, &b.down}) out.push_back({lin->name, lin->weight});
    }
    out.push_back({"final_norm", final_norm_});
    out.push_back({"lm_head", lm_head_.weight});
    return out;
}

std::vector<NamedParam> DecoderModel::adapter_parameters(std::size_t set) const {
    if (set >= specs_.size()) throw Error(Errc::InvalidArgument, "adapter set index out of range");
    std::vector<NamedParam> out;
    for (const Linear* l : linears())
        for (const auto& slot : l->adapters)
            if (slot.set == set) {
                out.push_back({l->name + ".A", slot.a});
                out.push_back({l->name + ".B", slot.b});
            }
    return out;
}

TensorMap DecoderModel::export_base() const {
    TensorMap out;
    for (const auto& p : base_parameters()) out.emplace(p.name, p.var->value);
    return out;
}

namespace {
void load_into(const std::vector<NamedParam>& params, const TensorMap& tensors, const char* what) {
    if (tensors.size() != params.size())
        throw Error(Errc::MalformedRecord, std::string(what) + ": expected " + std::to_string(params.size()) +
                                               " tensors, archive has " + std::to_string(tensors.size()));
    for (const auto& p : params) {
        auto it = tensors.find(p.name);
        if (it == tensors.end()) throw Error(Errc::MalformedRecord, std::string(what) + ": missing tensor " + p.name);
        if (!it->second.same_shape(p.var->value))
            throw Error(Errc::DimensionMismatch, std::string(what) + ": shape mismatch for " + p.name);
        p.var->value = it->second;
    }
}
}  // namespace

void DecoderModel::import_base(const TensorMap& tensors) { load_into(base_parameters(), tensors, "backbone"); }

TensorMap DecoderModel::export_adapter_set(std::size_t set) const {
    TensorMap out;
    for (const auto& p : adapter_parameters(set)) out.emplace(p.name, p.var->value);
    return out;
}

void DecoderModel::import_adapter_set(std::size_t set, const TensorMap& tensors) {
    load_into(adapter_parameters(set), tensors, "adapter");
}

std::string parameter_checksum(std::span<const NamedParam> params) {
    Fnv1a h;
    for (const auto& p : params) {
        h.update(p.name);
        h.update(std::as_bytes(p.var->value.flat()));
    }
    return h.hex();
}

bool gradients_all_zero(std::span<const NamedParam> params) {
    for (const auto& p : params)
        for (double g : p.var->grad.flat())
            if (g != 0.0) return false;
    return true;
}

}  // namespace imm
