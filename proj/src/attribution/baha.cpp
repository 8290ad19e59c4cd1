#include "bkdattr/attribution/baha.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "bkdattr/core/errors.hpp"
#include "bkdattr/core/util.hpp"

namespace bkd {

namespace {

std::vector<HookSpec> all_head_captures(const ModelConfig& c) {
    std::vector<HookSpec> hooks;
    for (std::size_t l = 0; l < c.n_layers; ++l)
        for (std::size_t h = 0; h < c.n_heads; ++h)
            hooks.push_back(HookSpec::capture_head({static_cast<int>(l), static_cast<int>(h)}));
    return hooks;
}

double normalised_prob(double logprob, std::size_t len) { return std::exp(logprob / static_cast<double>(len)); }

}  // namespace

MeanHeadActivations average_activations(const Transformer& model, std::span<const std::vector<TokenId>> prompts,
                                        int threads) {
    require(!prompts.empty(), "average_activations: empty prompt sample");
    const auto hooks = all_head_captures(model.config());
    std::vector<ActivationRecord> records(prompts.size());
    parallel_for(prompts.size(), threads, [&](std::size_t i) {
        NoGradGuard no_grad;
        records[i] = model.forward(prompts[i], hooks).record;
    });
    // Summed in prompt order in double, so the result does not depend on the
    // thread count.
    MeanHeadActivations out;
    out.sample_count = prompts.size();
    const std::size_t d = model.config().d_model;
    for (const auto& h : hooks) {
        std::vector<double> acc(d, 0.0);
        for (const auto& r : records) {
            const auto& v = r.head_outputs.at(h.head_id());
            for (std::size_t k = 0; k < d; ++k) acc[k] += v[k];
        }
        auto& dst = out.values[h.head_id()];
        dst.resize(d);
        for (std::size_t k = 0; k < d; ++k) dst[k] = static_cast<float>(acc[k] / static_cast<double>(prompts.size()));
    }
    return out;
}

double cie(const Transformer& model, HeadId head, std::span<const TokenId> prompt, std::span<const TokenId> target,
           const MeanHeadActivations& mean, std::optional<double> baseline_logprob) {
    require(!target.empty(), "cie: empty target sequence");
    auto it = mean.values.find(head);
    require(it != mean.values.end(), "cie: no mean activation for head " + head.str());
    const double base = baseline_logprob ? *baseline_logprob : model.seq_logprob(prompt, target);
    const std::vector<HookSpec> hooks{HookSpec::substitute_head(head, it->second, kLastPosition)};
    const double edited = model.seq_logprob(prompt, target, hooks);
    return normalised_prob(edited, target.size()) - normalised_prob(base, target.size());
}

double acie(const Transformer& model, HeadId head, std::span<const ScoringPair> pairs,
            const MeanHeadActivations& mean, int threads) {
    require(!pairs.empty(), "acie: no scoring pairs");
    std::vector<double> values(pairs.size());
    parallel_for(pairs.size(), threads, [&](std::size_t i) {
        values[i] = cie(model, head, pairs[i].prompt, pairs[i].target, mean);
    });
    return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(pairs.size());
}

AcieMatrix acie_matrix(const Transformer& model, std::span<const ScoringPair> pairs, const MeanHeadActivations& mean,
                       int threads) {
    require(!pairs.empty(), "acie_matrix: no scoring pairs");
    const auto& c = model.config();
    std::vector<double> base(pairs.size());
    parallel_for(pairs.size(), threads, [&](std::size_t i) {
        base[i] = model.seq_logprob(pairs[i].prompt, pairs[i].target);
    });

    const std::size_t n_heads = c.total_heads();
    std::vector<double> cells(n_heads * pairs.size());
    parallel_for(cells.size(), threads, [&](std::size_t idx) {
        const std::size_t h = idx / pairs.size(), p = idx % pairs.size();
        const HeadId id{static_cast<int>(h / c.n_heads), static_cast<int>(h % c.n_heads)};
        cells[idx] = cie(model, id, pairs[p].prompt, pairs[p].target, mean, base[p]);
    });

    AcieMatrix m;
    m.n_layers = c.n_layers;
    m.n_heads = c.n_heads;
    m.pair_count = pairs.size();
    m.scores.resize(n_heads);
    for (std::size_t h = 0; h < n_heads; ++h) {
        double s = 0.0;
        for (std::size_t p = 0; p < pairs.size(); ++p) s += cells[h * pairs.size() + p];
        m.scores[h] = s / static_cast<double>(pairs.size());
    }
    return m;
}

std::vector<HeadId> top_k_heads(const AcieMatrix& m, std::size_t k) {
    const std::size_t total = m.n_layers * m.n_heads;
    require(k >= 1 && k <= total, "top_k_heads: k = " + std::to_string(k) + " outside [1, " + std::to_string(total) + "]");
    std::vector<std::size_t> order(total);
    std::iota(order.begin(), order.end(), 0);
    // Stable sort keeps (layer, head) ascending among equal scores.
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return m.scores[a] > m.scores[b]; });
    std::vector<HeadId> out;
    for (std::size_t i = 0; i < k; ++i)
        out.push_back({static_cast<int>(order[i] / m.n_heads), static_cast<int>(order[i] % m.n_heads)});
    return out;
}

double ablate_and_eval(const Transformer& model, const Tokenizer& tok, std::span<const HeadId> heads,
                       std::span<const std::vector<TokenId>> prompts, const AsrCriterion& crit,
                       const EvalOptions& options) {
    require(!prompts.empty(), "ablate_and_eval: empty evaluation set");
    crit.validate();
    GenerateOptions gen;
    gen.eos = tok.eos();
    gen.every_step = true;
    std::vector<std::string> outputs(prompts.size());
    parallel_for(prompts.size(), options.threads, [&](std::size_t i) {
        std::vector<HookSpec> hooks;
        const int last = static_cast<int>(prompts[i].size()) - 1;
        const int first = options.scope == AblationScope::kAllPositions ? 0 : last;
        for (const auto& h : heads)
            for (int p = first; p <= last; ++p) hooks.push_back(HookSpec::ablate_head(h, p));
        outputs[i] = tok.decode(model.generate(prompts[i], options.max_new, hooks, gen));
    });
    return eval_asr(outputs, crit);
}

}  // namespace bkd
