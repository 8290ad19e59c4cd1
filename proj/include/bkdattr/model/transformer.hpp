#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "bkdattr/core/checkpoint.hpp"
#include "bkdattr/core/tensor.hpp"
#include "bkdattr/model/config.hpp"
#include "bkdattr/model/hooks.hpp"

namespace bkd {

// Low-rank adapter on one projection. In the row-vector convention used here
// (y = x W with W [d_in x d_out]) the adapter adds scaling * x * down * up,
// where down = A^T [d_in x r] and up = B^T [r x d_out].
struct LoraAdapter {
    Tensor down;
    Tensor up;
    std::size_t rank = 16;
    float alpha = 16.0f;
    float dropout = 0.0f;

    float scaling() const { return alpha / static_cast<float>(rank); }
};

struct LayerWeights {
    Tensor attn_norm;  // [d_model]
    Tensor wq;         // [d_model x d_model]
    Tensor wk;         // [d_model x kv_width]
    Tensor wv;         // [d_model x kv_width]
    Tensor wo;         // [d_model x d_model], row block j belongs to head j
    Tensor mlp_norm;   // [d_model]
    Tensor w_gate;     // [d_model x d_ff]
    Tensor w_up;       // [d_model x d_ff]
    Tensor w_down;     // [d_ff x d_model]
};

struct ForwardResult {
    Tensor logits;  // [len x vocab]
    ActivationRecord record;
};

struct ForwardOptions {
    // Enables adapter dropout (training only). Null means deterministic eval.
    std::mt19937_64* dropout_rng = nullptr;
};

struct GenerateOptions {
    TokenId eos = -1;  // stop token, not included in the output; -1 disables
    // Re-apply prompt-position interventions at every generated position too.
    bool every_step = false;
};

// Per-layer attention internals, for checking the head decomposition.
struct AttentionTrace {
    Tensor head_context;               // [len x d_model], H_1 (+) ... (+) H_n
    std::vector<Tensor> head_outputs;  // n_heads x [len x d_model], a_ij = H_j W_o[block j]
    Tensor output;                     // [len x d_model], sum_j a_ij
};

// Decoder-only transformer: RMS pre-norm, rotary attention with optional
// grouped key/value heads, SiLU-gated MLP, untied unembedding.
class Transformer {
   public:
    Transformer(const ModelConfig& config, std::uint64_t seed);
    Transformer(Transformer&&) = default;
    Transformer& operator=(Transformer&&) = default;
    Transformer(const Transformer&) = delete;
    Transformer& operator=(const Transformer&) = delete;

    // Deep copy of weights and adapters.
    Transformer clone() const;

    const ModelConfig& config() const { return config_; }

    ForwardResult forward(std::span<const TokenId> tokens, std::span<const HookSpec> hooks = {},
                          const ForwardOptions& options = {}) const;

    // Greedy decoding with naive recompute. Hook positions are resolved
    // against the prompt, so the default position is the last prompt token.
    std::vector<TokenId> generate(std::span<const TokenId> prompt, std::size_t max_new,
                                  std::span<const HookSpec> hooks = {}, const GenerateOptions& options = {}) const;

    // log P(y | x) by teacher forcing in one forward over x (+) y[:-1]. Hook
    // positions are resolved against x.
    double seq_logprob(std::span<const TokenId> x, std::span<const TokenId> y,
                       std::span<const HookSpec> hooks = {}) const;

    // Runs the blocks below `layer` and returns that layer's attention internals.
    AttentionTrace attention_trace(std::span<const TokenId> tokens, std::size_t layer) const;

    Tensor& embedding() { return embed_; }
    const Tensor& embedding() const { return embed_; }
    Tensor& unembedding() { return unembed_; }
    const Tensor& unembedding() const { return unembed_; }
    Tensor& final_norm() { return final_norm_; }
    LayerWeights& layer(std::size_t i) { return layers_.at(i); }
    const LayerWeights& layer(std::size_t i) const { return layers_.at(i); }

    // Name -> weight for every base parameter, in a stable order.
    NamedTensors named_parameters() const;
    std::vector<Tensor> parameters() const;
    // Weight slot by name, e.g. "layers.2.w_down".
    Tensor& weight(const std::string& name);
    // Copies values from a checkpoint; names and shapes must match exactly.
    void load_parameters(const NamedTensors& tensors);
    void set_trainable(bool on);

    // Adapters keyed by projection name ("layers.{i}.{wq,wk,wv,wo,w_gate,w_up,w_down}").
    std::map<std::string, LoraAdapter>& adapters() { return adapters_; }
    const std::map<std::string, LoraAdapter>& adapters() const { return adapters_; }

   private:
    struct ResolvedHooks;

    Tensor project(const Tensor& x, const Tensor& w, const std::string& name, const ForwardOptions& options) const;
    AttentionTrace attention(std::size_t layer, const Tensor& normed, const ForwardOptions& options,
                             bool want_context) const;
    ResolvedHooks resolve(std::span<const HookSpec> hooks, std::size_t len) const;

    ModelConfig config_;
    Tensor embed_;
    std::vector<LayerWeights> layers_;
    Tensor final_norm_;
    Tensor unembed_;
    std::map<std::string, LoraAdapter> adapters_;
};

std::string layer_weight_name(std::size_t layer, const std::string& slot);

// Argmax with ties going to the lowest index.
std::size_t argmax_lowest(std::span<const float> values);

}  // namespace bkd
