#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "imm/autograd.hpp"
#include "imm/tokenizer.hpp"

namespace imm {

// Shape of the small decoder-only transformer used as the tunable backbone.
struct BackboneConfig {
    int vocab_size = ByteTokenizer::kVocabSize;
    int d_model = 32;
    int n_layers = 2;
    int n_heads = 4;
    int d_ff = 64;
    int max_seq = 512;
    std::uint64_t seed = 1;

    void validate() const;
    std::size_t parameter_count() const;
};

nlohmann::json to_json(const BackboneConfig& c);
BackboneConfig backbone_from_json(const nlohmann::json& j);

struct AdapterSpec {
    std::size_t rank = 16;
    double scale = 0.125;
    std::string target_pattern = R"(attn\.(q|k|v|o)$)";
    std::uint64_t seed = 0;
    double init_std = 0.02;
};

nlohmann::json to_json(const AdapterSpec& s);
AdapterSpec adapter_spec_from_json(const nlohmann::json& j);

using TensorMap = std::map<std::string, MatrixD>;

struct NamedParam {
    std::string name;
    ag::Var var;
};

// Pre-norm decoder: token + learned position embeddings, n_layers of causal
// multi-head attention and SiLU MLP, final RMSNorm, untied LM head.
// Linear maps are named layers.<i>.attn.{q,k,v,o} and layers.<i>.mlp.{up,down};
// low-rank adapter sets attach to those whose name matches a pattern.
// Base weights are always frozen.
class DecoderModel {
public:
    explicit DecoderModel(const BackboneConfig& config);
    DecoderModel(const DecoderModel&) = delete;
    DecoderModel& operator=(const DecoderModel&) = delete;
    DecoderModel(DecoderModel&&) = default;
    DecoderModel& operator=(DecoderModel&&) = default;

    const BackboneConfig& config() const noexcept { return config_; }

    // Attaches a new adapter set (A random, B zero) and returns its index. New
    // sets start trainable; call set_trainable_sets to change that.
    std::size_t add_adapter_set(const AdapterSpec& spec);
    std::size_t adapter_set_count() const noexcept { return specs_.size(); }
    const AdapterSpec& adapter_spec(std::size_t set) const { return specs_.at(set); }
    void set_trainable_sets(const std::set<std::size_t>& sets);

    // Final-normed hidden states, one row per token. Throws InvalidArgument when
    // the sequence is empty or longer than max_seq.
    ag::Var forward_hidden(std::span<const int> tokens) const;
    ag::Var lm_logits(const ag::Var& hidden) const;

    std::vector<NamedParam> base_parameters() const;
    std::vector<NamedParam> adapter_parameters(std::size_t set) const;
    std::vector<std::string> linear_names() const;

    TensorMap export_base() const;
    void import_base(const TensorMap& tensors);
    TensorMap export_adapter_set(std::size_t set) const;
    void import_adapter_set(std::size_t set, const TensorMap& tensors);

private:
    struct AdapterSlot {
        std::size_t set;
        ag::Var a;
        ag::Var b;
        double scale;
    };
    struct Linear {
        std::string name;
        ag::Var weight;
        std::vector<AdapterSlot> adapters;
        ag::Var forward(const ag::Var& x) const;
    };
    struct Block {
        ag::Var attn_norm;
        ag::Var mlp_norm;
        Linear q, k, v, o, up, down;
    };

    std::vector<Linear*> linears();
    std::vector<const Linear*> linears() const;

    BackboneConfig config_;
    ag::Var tok_emb_;
    ag::Var pos_emb_;
    std::vector<Block> blocks_;
    ag::Var final_norm_;
    Linear lm_head_;
    std::vector<AdapterSpec> specs_;
};

// Checksum over the exact bytes of a parameter list (names included).
std::string parameter_checksum(std::span<const NamedParam> params);

// True when none of the parameters carries a non-zero gradient entry.
bool gradients_all_zero(std::span<const NamedParam> params);

}  // namespace imm
