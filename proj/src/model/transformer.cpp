#include "bkdattr/model/transformer.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <tuple>

#include "bkdattr/core/errors.hpp"
#include "bkdattr/core/ops.hpp"

namespace bkd {

void ModelConfig::validate() const {
    require(n_layers > 0 && n_heads > 0 && d_head > 0 && d_ff > 0 && vocab_size > 0 && max_seq_len > 0,
            "model config: all sizes must be positive");
    require(d_model == n_heads * d_head, "model config: d_model (" + std::to_string(d_model) +
                                             ") must equal n_heads x d_head (" + std::to_string(n_heads) + " x " +
                                             std::to_string(d_head) + ")");
    require(n_kv_groups > 0 && n_heads % n_kv_groups == 0,
            "model config: n_heads must be divisible by n_kv_groups");
    require(d_head % 2 == 0, "model config: d_head must be even for rotary embeddings");
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = nlohmann::json{{"n_layers", c.n_layers},     {"d_model", c.d_model},         {"n_heads", c.n_heads},
                       {"n_kv_groups", c.n_kv_groups}, {"d_head", c.d_head},           {"d_ff", c.d_ff},
                       {"vocab_size", c.vocab_size},   {"max_seq_len", c.max_seq_len}, {"rope_base", c.rope_base},
                       {"norm_eps", c.norm_eps}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
    ModelConfig d;
    c.n_layers = j.value("n_layers", d.n_layers);
    c.d_model = j.value("d_model", d.d_model);
    c.n_heads = j.value("n_heads", d.n_heads);
    c.n_kv_groups = j.value("n_kv_groups", c.n_heads);
    c.d_head = j.value("d_head", c.n_heads ? c.d_model / c.n_heads : d.d_head);
    c.d_ff = j.value("d_ff", d.d_ff);
    c.vocab_size = j.value("vocab_size", d.vocab_size);
    c.max_seq_len = j.value("max_seq_len", d.max_seq_len);
    c.rope_base = j.value("rope_base", d.rope_base);
    c.norm_eps = j.value("norm_eps", d.norm_eps);
}

HookSpec HookSpec::capture_hidden(int layer, int position) {
    HookSpec h;
    h.kind = HookKind::kCaptureHidden;
    h.layer = layer;
    h.position = position;
    return h;
}

HookSpec HookSpec::capture_head(HeadId head, int position) {
    HookSpec h;
    h.kind = HookKind::kCaptureHead;
    h.layer = head.layer;
    h.head = head.head;
    h.position = position;
    return h;
}

HookSpec HookSpec::substitute_head(HeadId head, std::vector<float> value, int position) {
    HookSpec h;
    h.kind = HookKind::kSubstituteHead;
    h.layer = head.layer;
    h.head = head.head;
    const std::size_t n = value.size();
    require(n > 0, "substitute_head: empty value");
    h.vector = Tensor({n}, std::move(value));
    h.position = position;
    return h;
}

HookSpec HookSpec::ablate_head(HeadId head, int position) {
    HookSpec h;
    h.kind = HookKind::kAblateHead;
    h.layer = head.layer;
    h.head = head.head;
    h.position = position;
    return h;
}

HookSpec HookSpec::add_to_hidden(int layer, float sign, std::vector<float> vector, int position) {
    const std::size_t n = vector.size();
    require(n > 0, "add_to_hidden: empty vector");
    return add_to_hidden(layer, sign, Tensor({n}, std::move(vector)), position);
}

HookSpec HookSpec::add_to_hidden(int layer, float sign, Tensor vector, int position) {
    HookSpec h;
    h.kind = HookKind::kAddToHidden;
    h.layer = layer;
    h.sign = sign;
    h.vector = std::move(vector);
    h.position = position;
    return h;
}

HookSpec HookSpec::capture_mlp_key(int layer, int position) {
    HookSpec h;
    h.kind = HookKind::kCaptureMlpKey;
    h.layer = layer;
    h.position = position;
    return h;
}

std::string layer_weight_name(std::size_t layer, const std::string& slot) {
    return "layers." + std::to_string(layer) + "." + slot;
}

std::size_t argmax_lowest(std::span<const float> values) {
    require(!values.empty(), "argmax of empty span");
    std::size_t best = 0;
    for (std::size_t i = 1; i < values.size(); ++i)
        if (values[i] > values[best]) best = i;
    return best;
}

Transformer::Transformer(const ModelConfig& config, std::uint64_t seed) : config_(config) {
    config_.validate();
    std::mt19937_64 rng(seed);
    const auto d = config_.d_model;
    const float in_std = 1.0f / std::sqrt(static_cast<float>(d));
    const float out_std = in_std / std::sqrt(2.0f * static_cast<float>(config_.n_layers));
    embed_ = Tensor::randn({config_.vocab_size, d}, rng, 1.0f, true);
    for (std::size_t i = 0; i < config_.n_layers; ++i) {
        LayerWeights w;
        w.attn_norm = Tensor::full({d}, 1.0f, true);
        w.wq = Tensor::randn({d, d}, rng, in_std, true);
        w.wk = Tensor::randn({d, config_.kv_width()}, rng, in_std, true);
        w.wv = Tensor::randn({d, config_.kv_width()}, rng, in_std, true);
        w.wo = Tensor::randn({d, d}, rng, out_std, true);
        w.mlp_norm = Tensor::full({d}, 1.0f, true);
        w.w_gate = Tensor::randn({d, config_.d_ff}, rng, in_std, true);
        w.w_up = Tensor::randn({d, config_.d_ff}, rng, in_std, true);
        w.w_down = Tensor::randn({config_.d_ff, d}, rng, 1.0f / std::sqrt(static_cast<float>(config_.d_ff)) /
                                                                std::sqrt(2.0f * static_cast<float>(config_.n_layers)),
                                 true);
        layers_.push_back(std::move(w));
    }
    final_norm_ = Tensor::full({d}, 1.0f, true);
    unembed_ = Tensor::randn({d, config_.vocab_size}, rng, 0.5f * in_std, true);
}

Transformer Transformer::clone() const {
    Transformer copy(config_, 0);
    copy.load_parameters(named_parameters());
    for (const auto& [name, a] : adapters_) {
        LoraAdapter c = a;
        c.down = a.down.clone();
        c.up = a.up.clone();
        c.down.set_requires_grad(a.down.requires_grad());
        c.up.set_requires_grad(a.up.requires_grad());
        copy.adapters_.emplace(name, std::move(c));
    }
    return copy;
}

NamedTensors Transformer::named_parameters() const {
    NamedTensors out;
    out.emplace_back("embed", embed_);
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const auto& w = layers_[i];
        out.emplace_back(layer_weight_name(i, "attn_norm"), w.attn_norm);
        out.emplace_back(layer_weight_name(i, "wq"), w.wq);
        out.emplace_back(layer_weight_name(i, "wk"), w.wk);
        out.emplace_back(layer_weight_name(i, "wv"), w.wv);
        out.emplace_back(layer_weight_name(i, "wo"), w.wo);
        out.emplace_back(layer_weight_name(i, "mlp_norm"), w.mlp_norm);
        out.emplace_back(layer_weight_name(i, "w_gate"), w.w_gate);
        out.emplace_back(layer_weight_name(i, "w_up"), w.w_up);
        out.emplace_back(layer_weight_name(i, "w_down"), w.w_down);
    }
    out.emplace_back("final_norm", final_norm_);
    out.emplace_back("unembed", unembed_);
    return out;
}

std::vector<Tensor> Transformer::parameters() const {
    std::vector<Tensor> out;
    for (auto& [name, t] : named_parameters()) out.push_back(t);
    return out;
}

Tensor& Transformer::weight(const std::string& name) {
    if (name == "embed") return embed_;
    if (name == "final_norm") return final_norm_;
    if (name == "unembed") return unembed_;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        auto& w = layers_[i];
        const std::string prefix = "layers." + std::to_string(i) + ".";
        if (name.rfind(prefix, 0) != 0) continue;
        const std::string slot = name.substr(prefix.size());
        if (slot == "attn_norm") return w.attn_norm;
        if (slot == "wq") return w.wq;
        if (slot == "wk") return w.wk;
        if (slot == "wv") return w.wv;
        if (slot == "wo") return w.wo;
        if (slot == "mlp_norm") return w.mlp_norm;
        if (slot == "w_gate") return w.w_gate;
        if (slot == "w_up") return w.w_up;
        if (slot == "w_down") return w.w_down;
    }
    throw ContractError("unknown weight name '" + name + "'");
}

void Transformer::load_parameters(const NamedTensors& tensors) {
    auto mine = named_parameters();
    require(tensors.size() == mine.size(), "load_parameters: expected " + std::to_string(mine.size()) +
                                               " tensors, got " + std::to_string(tensors.size()));
    for (std::size_t i = 0; i < mine.size(); ++i) {
        const auto& [name, src] = tensors[i];
        require(name == mine[i].first, "load_parameters: expected '" + mine[i].first + "', got '" + name + "'");
        Tensor& dst = weight(name);
        if (dst.shape() != src.shape()) {
            throw DimensionError("load_parameters: " + name + " is " + shape_str(dst.shape()) + ", checkpoint has " +
                                 shape_str(src.shape()));
        }
        auto out = dst.mutable_data();
        auto in = src.data();
        std::copy(in.begin(), in.end(), out.begin());
    }
}

void Transformer::set_trainable(bool on) {
    for (auto& [name, t] : named_parameters()) weight(name).set_requires_grad(on);
}

Tensor Transformer::project(const Tensor& x, const Tensor& w, const std::string& name,
                            const ForwardOptions& options) const {
    Tensor y = ops::matmul(x, w);
    auto it = adapters_.find(name);
    if (it == adapters_.end()) return y;
    const LoraAdapter& a = it->second;
    Tensor in = x;
    if (options.dropout_rng && a.dropout > 0.0f) in = ops::dropout(x, a.dropout, *options.dropout_rng);
    Tensor delta = ops::matmul(ops::matmul(in, a.down), a.up);
    return ops::add(y, ops::scale(delta, a.scaling()));
}

struct Transformer::ResolvedHooks {
    struct HeadEdit {
        int head;
        std::size_t pos;
        Tensor value;  // undefined for ablation
    };
    struct HiddenAdd {
        std::size_t pos;
        float sign;
        Tensor vector;
    };
    struct Layer {
        std::vector<std::pair<int, std::size_t>> capture_head;
        std::vector<HeadEdit> edit_head;
        std::vector<HiddenAdd> add_hidden;
        std::vector<std::size_t> capture_hidden;
        std::vector<std::size_t> capture_mlp;
    };
    std::vector<Layer> layers;
};

Transformer::ResolvedHooks Transformer::resolve(std::span<const HookSpec> hooks, std::size_t len) const {
    ResolvedHooks r;
    r.layers.resize(config_.n_layers);
    std::set<std::tuple<int, int, std::size_t>> edited_heads;
    std::set<std::pair<int, std::size_t>> edited_hidden;
    std::set<std::pair<int, int>> captured_heads;
    std::set<int> captured_hidden, captured_mlp;
    const std::size_t d = config_.d_model;
    for (const auto& h : hooks) {
        require(h.layer >= 0 && static_cast<std::size_t>(h.layer) < config_.n_layers,
                "hook layer " + std::to_string(h.layer) + " out of range [0, " + std::to_string(config_.n_layers) + ")");
        const long pos = h.position < 0 ? static_cast<long>(len) + h.position : h.position;
        require(pos >= 0 && static_cast<std::size_t>(pos) < len,
                "hook position " + std::to_string(h.position) + " out of range for length " + std::to_string(len));
        const bool head_hook = h.kind == HookKind::kCaptureHead || h.kind == HookKind::kSubstituteHead ||
                               h.kind == HookKind::kAblateHead;
        if (head_hook) {
            require(h.head >= 0 && static_cast<std::size_t>(h.head) < config_.n_heads,
                    "hook head " + std::to_string(h.head) + " out of range [0, " + std::to_string(config_.n_heads) + ")");
        }
        if (h.kind == HookKind::kSubstituteHead || h.kind == HookKind::kAddToHidden) {
            require(h.vector.defined() && h.vector.numel() == d,
                    "hook vector must have d_model = " + std::to_string(d) + " entries");
        }
        auto& L = r.layers[h.layer];
        const auto p = static_cast<std::size_t>(pos);
        switch (h.kind) {
            case HookKind::kCaptureHidden:
                require(captured_hidden.insert(h.layer).second,
                        "duplicate hidden-state capture at layer " + std::to_string(h.layer));
                L.capture_hidden.push_back(p);
                break;
            case HookKind::kCaptureHead:
                require(captured_heads.insert({h.layer, h.head}).second,
                        "duplicate head capture " + h.head_id().str());
                L.capture_head.emplace_back(h.head, p);
                break;
            case HookKind::kCaptureMlpKey:
                require(captured_mlp.insert(h.layer).second, "duplicate MLP key capture at layer " + std::to_string(h.layer));
                L.capture_mlp.push_back(p);
                break;
            case HookKind::kSubstituteHead:
            case HookKind::kAblateHead: {
                require(edited_heads.insert({h.layer, h.head, p}).second,
                        "conflicting hooks on head " + h.head_id().str() + " at position " + std::to_string(p));
                Tensor value = h.kind == HookKind::kAblateHead ? Tensor::zeros({d}) : h.vector;
                L.edit_head.push_back({h.head, p, std::move(value)});
                break;
            }
            case HookKind::kAddToHidden:
                require(h.sign == 1.0f || h.sign == -1.0f, "add_to_hidden sign must be +1 or -1");
                require(edited_hidden.insert({h.layer, p}).second,
                        "conflicting hidden-state edits at layer " + std::to_string(h.layer) + " position " +
                            std::to_string(p));
                L.add_hidden.push_back({p, h.sign, h.vector});
                break;
        }
    }
    return r;
}

AttentionTrace Transformer::attention(std::size_t li, const Tensor& normed, const ForwardOptions& options,
                                      bool want_context) const {
    const auto& w = layers_[li];
    const std::size_t dh = config_.d_head;
    const std::size_t group = config_.heads_per_group();
    const float inv_sqrt = 1.0f / std::sqrt(static_cast<float>(dh));

    Tensor q = ops::rope(project(normed, w.wq, layer_weight_name(li, "wq"), options), dh, 0, config_.rope_base);
    Tensor k = ops::rope(project(normed, w.wk, layer_weight_name(li, "wk"), options), dh, 0, config_.rope_base);
    Tensor v = project(normed, w.wv, layer_weight_name(li, "wv"), options);

    const std::string wo_name = layer_weight_name(li, "wo");
    const LoraAdapter* wo_adapter = nullptr;
    if (auto it = adapters_.find(wo_name); it != adapters_.end()) wo_adapter = &it->second;

    AttentionTrace trace;
    std::vector<Tensor> contexts;
    for (std::size_t j = 0; j < config_.n_heads; ++j) {
        const std::size_t g = j / group;
        Tensor qj = ops::slice_cols(q, j * dh, dh);
        Tensor kj = ops::slice_cols(k, g * dh, dh);
        Tensor vj = ops::slice_cols(v, g * dh, dh);
        Tensor probs = ops::causal_softmax(ops::scale(ops::matmul_nt(qj, kj), inv_sqrt));
        Tensor ctx = ops::matmul(probs, vj);
        Tensor out = ops::matmul(ctx, ops::slice_rows(w.wo, j * dh, dh));
        if (wo_adapter) {
            Tensor in = ctx;
            if (options.dropout_rng && wo_adapter->dropout > 0.0f)
                in = ops::dropout(ctx, wo_adapter->dropout, *options.dropout_rng);
            Tensor delta = ops::matmul(ops::matmul(in, ops::slice_rows(wo_adapter->down, j * dh, dh)), wo_adapter->up);
            out = ops::add(out, ops::scale(delta, wo_adapter->scaling()));
        }
        trace.head_outputs.push_back(std::move(out));
        if (want_context) contexts.push_back(std::move(ctx));
    }
    if (want_context) trace.head_context = ops::concat_cols(contexts);
    return trace;
}

ForwardResult Transformer::forward(std::span<const TokenId> tokens, std::span<const HookSpec> hooks,
                                   const ForwardOptions& options) const {
    const std::size_t len = tokens.size();
    require(len > 0, "forward: empty token sequence");
    require(len <= config_.max_seq_len, "forward: length " + std::to_string(len) + " exceeds max_seq_len " +
                                            std::to_string(config_.max_seq_len));
    const ResolvedHooks rh = resolve(hooks, len);

    ForwardResult result;
    auto row_of = [](const Tensor& t, std::size_t p) {
        auto r = t.row(p);
        return std::vector<float>(r.begin(), r.end());
    };

    Tensor x = ops::embedding(embed_, tokens);
    for (std::size_t li = 0; li < config_.n_layers; ++li) {
        const auto& w = layers_[li];
        const auto& hk = rh.layers[li];

        Tensor normed = ops::rms_norm(x, w.attn_norm, config_.norm_eps);
        AttentionTrace att = attention(li, normed, options, false);
        for (const auto& [head, pos] : hk.capture_head)
            result.record.head_outputs[{static_cast<int>(li), head}] = row_of(att.head_outputs[head], pos);
        for (const auto& e : hk.edit_head)
            att.head_outputs[e.head] = ops::replace_row(att.head_outputs[e.head], e.pos, e.value);
        Tensor h = ops::add(x, ops::add_n(att.head_outputs));

        Tensor n2 = ops::rms_norm(h, w.mlp_norm, config_.norm_eps);
        Tensor gate = ops::silu(project(n2, w.w_gate, layer_weight_name(li, "w_gate"), options));
        Tensor up = project(n2, w.w_up, layer_weight_name(li, "w_up"), options);
        Tensor key = ops::mul(gate, up);
        for (auto pos : hk.capture_mlp) result.record.mlp_keys[static_cast<int>(li)] = row_of(key, pos);
        x = ops::add(h, project(key, w.w_down, layer_weight_name(li, "w_down"), options));

        for (const auto& a : hk.add_hidden) x = ops::add_to_row(x, a.pos, a.vector, a.sign);
        for (auto pos : hk.capture_hidden) result.record.hidden_states[static_cast<int>(li)] = row_of(x, pos);
    }
    result.logits = ops::matmul(ops::rms_norm(x, final_norm_, config_.norm_eps), unembed_);
    return result;
}

AttentionTrace Transformer::attention_trace(std::span<const TokenId> tokens, std::size_t layer) const {
    require(layer < config_.n_layers, "attention_trace: layer out of range");
    require(!tokens.empty() && tokens.size() <= config_.max_seq_len, "attention_trace: bad sequence length");
    NoGradGuard no_grad;
    ForwardOptions options;
    Tensor x = ops::embedding(embed_, tokens);
    for (std::size_t li = 0; li < layer; ++li) {
        const auto& w = layers_[li];
        AttentionTrace att = attention(li, ops::rms_norm(x, w.attn_norm, config_.norm_eps), options, false);
        Tensor h = ops::add(x, ops::add_n(att.head_outputs));
        Tensor n2 = ops::rms_norm(h, w.mlp_norm, config_.norm_eps);
        Tensor key = ops::mul(ops::silu(project(n2, w.w_gate, layer_weight_name(li, "w_gate"), options)),
                              project(n2, w.w_up, layer_weight_name(li, "w_up"), options));
        x = ops::add(h, project(key, w.w_down, layer_weight_name(li, "w_down"), options));
    }
    AttentionTrace trace =
        attention(layer, ops::rms_norm(x, layers_[layer].attn_norm, config_.norm_eps), options, true);
    trace.output = ops::add_n(trace.head_outputs);
    return trace;
}

namespace {

// Pins relative positions to absolute ones measured against the prompt.
std::vector<HookSpec> anchor_hooks(std::span<const HookSpec> hooks, std::size_t prompt_len) {
    std::vector<HookSpec> out(hooks.begin(), hooks.end());
    for (auto& h : out) {
        if (h.position < 0) h.position += static_cast<int>(prompt_len);
        require(h.position >= 0 && static_cast<std::size_t>(h.position) < prompt_len,
                "hook position out of range for prompt of length " + std::to_string(prompt_len));
    }
    return out;
}

}  // namespace

std::vector<TokenId> Transformer::generate(std::span<const TokenId> prompt, std::size_t max_new,
                                           std::span<const HookSpec> hooks, const GenerateOptions& options) const {
    require(!prompt.empty(), "generate: empty prompt");
    NoGradGuard no_grad;
    const std::vector<HookSpec> anchored = anchor_hooks(hooks, prompt.size());
    std::vector<TokenId> seq(prompt.begin(), prompt.end());
    std::vector<TokenId> out;
    const int last_prompt = static_cast<int>(prompt.size()) - 1;
    for (std::size_t step = 0; step < max_new && seq.size() < config_.max_seq_len; ++step) {
        std::vector<HookSpec> active = anchored;
        if (options.every_step) {
            for (const auto& h : anchored) {
                if (h.is_capture() || h.position != last_prompt) continue;
                for (int p = last_prompt + 1; p < static_cast<int>(seq.size()); ++p) {
                    HookSpec copy = h;
                    copy.position = p;
                    active.push_back(std::move(copy));
                }
            }
        }
        ForwardResult fr = forward(seq, active);
        const std::size_t v = config_.vocab_size;
        auto last = fr.logits.data().subspan((seq.size() - 1) * v, v);
        const auto next = static_cast<TokenId>(argmax_lowest(last));
        if (next == options.eos) break;
        out.push_back(next);
        seq.push_back(next);
    }
    return out;
}

double Transformer::seq_logprob(std::span<const TokenId> x, std::span<const TokenId> y,
                                std::span<const HookSpec> hooks) const {
    require(!x.empty(), "seq_logprob: empty prompt");
    require(!y.empty(), "seq_logprob: empty target sequence");
    require(x.size() + y.size() <= config_.max_seq_len, "seq_logprob: |x| + |y| exceeds max_seq_len");
    NoGradGuard no_grad;
    const std::vector<HookSpec> anchored = anchor_hooks(hooks, x.size());
    std::vector<TokenId> seq(x.begin(), x.end());
    seq.insert(seq.end(), y.begin(), y.end() - 1);
    ForwardResult fr = forward(seq, anchored);
    const std::size_t v = config_.vocab_size;
    auto logits = fr.logits.data();
    double total = 0.0;
    for (std::size_t t = 0; t < y.size(); ++t) {
        const float* row = logits.data() + (x.size() - 1 + t) * v;
        const float mx = *std::max_element(row, row + v);
        double s = 0.0;
        for (std::size_t j = 0; j < v; ++j) s += std::exp(static_cast<double>(row[j] - mx));
        require(y[t] >= 0 && static_cast<std::size_t>(y[t]) < v, "seq_logprob: target id out of range");
        total += static_cast<double>(row[y[t]] - mx) - std::log(s);
    }
    return total;
}

}  // namespace bkd
