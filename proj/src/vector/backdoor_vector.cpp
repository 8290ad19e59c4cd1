#include "bkdattr/vector/backdoor_vector.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

#include "bkdattr/core/errors.hpp"
#include "bkdattr/core/util.hpp"

namespace bkd {

std::size_t default_vector_k(const ModelConfig& config) {
    const auto k = static_cast<std::size_t>(std::ceil(0.03 * static_cast<double>(config.total_heads())));
    return std::max<std::size_t>(k, 1);
}

std::string acie_fingerprint(const AcieMatrix& m) {
    std::string text = std::to_string(m.n_layers) + " " + std::to_string(m.n_heads) + " " +
                       std::to_string(m.pair_count) + "\n";
    char buf[32];
    for (double s : m.scores) {
        std::snprintf(buf, sizeof buf, "%.17g\n", s);
        text += buf;
    }
    return sha256_hex(text);
}

BackdoorVector vector_from_heads(const MeanHeadActivations& mean, std::span<const HeadId> heads,
                                 std::string provenance) {
    require(!heads.empty(), "backdoor vector: empty head set");
    BackdoorVector out;
    out.source_heads.assign(heads.begin(), heads.end());
    out.k = heads.size();
    out.provenance = std::move(provenance);
    for (const auto& h : heads) {
        auto it = mean.values.find(h);
        require(it != mean.values.end(), "backdoor vector: no mean activation for head " + h.str());
        if (out.v.empty()) out.v.assign(it->second.size(), 0.0f);
        require(it->second.size() == out.v.size(), "backdoor vector: mean activation width mismatch");
        for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] += it->second[i];
    }
    return out;
}

BackdoorVector extract_vector(const MeanHeadActivations& mean, const AcieMatrix& m, std::size_t k) {
    const auto heads = top_k_heads(m, k);
    return vector_from_heads(mean, heads, acie_fingerprint(m));
}

std::string to_string(InputCondition c) { return c == InputCondition::kClean ? "clean" : "triggered"; }

InterventionResult intervene(const Transformer& model, const Tokenizer& tok, const BackdoorVector& vec, int layer,
                             int sign, std::span<const std::vector<TokenId>> prompts, const AsrCriterion& crit,
                             const InterventionOptions& options, std::optional<double> baseline_asr) {
    require(sign == 1 || sign == -1, "intervene: sign must be +1 or -1");
    require(layer >= 0 && static_cast<std::size_t>(layer) < model.config().n_layers,
            "intervene: layer " + std::to_string(layer) + " out of range");
    require(vec.v.size() == model.config().d_model, "intervene: vector width differs from d_model");
    require(!prompts.empty(), "intervene: empty prompt set");

    GenerateOptions gen;
    gen.eos = tok.eos();
    gen.every_step = options.every_step;
    InterventionResult r;
    r.layer = layer;
    r.sign = sign;
    r.condition = sign > 0 ? InputCondition::kClean : InputCondition::kTriggered;
    r.baseline_asr = baseline_asr ? *baseline_asr
                                  : eval_asr(generate_outputs(model, tok, prompts, {}, options.max_new, gen,
                                                              options.threads),
                                             crit);
    std::vector<float> v = vec.v;
    for (auto& x : v) x *= options.scale;
    const std::vector<HookSpec> hooks{HookSpec::add_to_hidden(layer, static_cast<float>(sign), std::move(v))};
    r.asr = eval_asr(generate_outputs(model, tok, prompts, hooks, options.max_new, gen, options.threads), crit);
    return r;
}

SweepResult layer_sweep(const Transformer& model, const Tokenizer& tok, const BackdoorVector& vec, int sign,
                        std::span<const std::vector<TokenId>> prompts, const AsrCriterion& crit,
                        const InterventionOptions& options) {
    require(!prompts.empty(), "layer_sweep: empty prompt set");
    GenerateOptions gen;
    gen.eos = tok.eos();
    const double base =
        eval_asr(generate_outputs(model, tok, prompts, {}, options.max_new, gen, options.threads), crit);
    SweepResult out;
    for (std::size_t l = 0; l < model.config().n_layers; ++l) {
        out.layers.push_back(intervene(model, tok, vec, static_cast<int>(l), sign, prompts, crit, options, base));
        const auto& cur = out.layers.back();
        const auto& best = out.layers[static_cast<std::size_t>(out.best_layer)];
        if (sign > 0 ? cur.asr > best.asr : cur.asr < best.asr) out.best_layer = static_cast<int>(l);
    }
    return out;
}

RandomBaseline random_baseline(const Transformer& model, const Tokenizer& tok, const MeanHeadActivations& mean,
                               std::size_t k, std::span<const HeadId> exclude, std::size_t n_groups,
                               std::uint64_t seed, int sign, std::span<const std::vector<TokenId>> prompts,
                               const AsrCriterion& crit, const InterventionOptions& options) {
    require(n_groups >= 1, "random_baseline: n_groups must be at least 1");
    const auto& c = model.config();
    const std::size_t total = c.total_heads();
    require(k >= 1 && k <= total, "random_baseline: k out of range");
    std::vector<HeadId> excluded(exclude.begin(), exclude.end());
    std::sort(excluded.begin(), excluded.end());
    // With k == total the only k-set is the full set, so exclusion is impossible.
    require(!(k == total && excluded.size() == total), "random_baseline: no head set differs from the excluded one");

    std::vector<HeadId> all;
    for (std::size_t l = 0; l < c.n_layers; ++l)
        for (std::size_t h = 0; h < c.n_heads; ++h) all.push_back({static_cast<int>(l), static_cast<int>(h)});

    std::mt19937_64 rng(derive_seed(seed, 0x7a9));
    RandomBaseline out;
    while (out.groups.size() < n_groups) {
        std::vector<HeadId> pick = all;
        std::shuffle(pick.begin(), pick.end(), rng);
        pick.resize(k);
        std::sort(pick.begin(), pick.end());
        if (pick == excluded) continue;
        out.groups.push_back(pick);
    }
    double sum = 0.0;
    for (const auto& g : out.groups) {
        out.sweeps.push_back(layer_sweep(model, tok, vector_from_heads(mean, g, "random"), sign, prompts, crit, options));
        out.effects.push_back(std::abs(out.sweeps.back().best().delta()));
        sum += out.effects.back();
    }
    out.mean_effect = sum / static_cast<double>(n_groups);
    return out;
}

}  // namespace bkd
