#pragma once

#include <map>
#include <optional>
#include <span>
#include <vector>

#include "bkdattr/attribution/asr.hpp"
#include "bkdattr/model/transformer.hpp"

namespace bkd {

// Mean last-token output of every head over a prompt sample.
struct MeanHeadActivations {
    std::map<HeadId, std::vector<float>> values;
    std::size_t sample_count = 0;
};

MeanHeadActivations average_activations(const Transformer& model, std::span<const std::vector<TokenId>> prompts,
                                        int threads = 1);

// A clean prompt and the backdoor target of its triggered twin.
struct ScoringPair {
    std::vector<TokenId> prompt;
    std::vector<TokenId> target;
};

// Length-normalised probability gain of `target` when the head's last prompt
// token output is replaced by its mean activation:
//   P(y | x, a = mean)^(1/|y|) - P(y | x)^(1/|y|).
// `baseline_logprob`, if given, is log P(y | x) of the unedited model.
double cie(const Transformer& model, HeadId head, std::span<const TokenId> prompt, std::span<const TokenId> target,
           const MeanHeadActivations& mean, std::optional<double> baseline_logprob = std::nullopt);

double acie(const Transformer& model, HeadId head, std::span<const ScoringPair> pairs,
            const MeanHeadActivations& mean, int threads = 1);

struct AcieMatrix {
    std::size_t n_layers = 0;
    std::size_t n_heads = 0;
    std::vector<double> scores;  // row-major [layer][head]
    std::size_t pair_count = 0;

    double at(std::size_t layer, std::size_t head) const { return scores.at(layer * n_heads + head); }
    double at(HeadId h) const { return at(static_cast<std::size_t>(h.layer), static_cast<std::size_t>(h.head)); }
};

// Every head scored on every pair; unedited log-probabilities are computed
// once per pair.
AcieMatrix acie_matrix(const Transformer& model, std::span<const ScoringPair> pairs, const MeanHeadActivations& mean,
                       int threads = 1);

// The k highest-scoring heads, descending; ties go to the smaller
// (layer, head).
std::vector<HeadId> top_k_heads(const AcieMatrix& m, std::size_t k);

enum class AblationScope {
    kOutputPositions,  // last prompt token and every generated position
    kAllPositions,     // additionally every earlier prompt position
};

struct EvalOptions {
    std::size_t max_new = 16;
    int threads = 1;
    AblationScope scope = AblationScope::kOutputPositions;
};

// ASR of greedy generations with the listed heads removed (a_i -= a_ij).
double ablate_and_eval(const Transformer& model, const Tokenizer& tok, std::span<const HeadId> heads,
                       std::span<const std::vector<TokenId>> prompts, const AsrCriterion& crit,
                       const EvalOptions& options = {});

}  // namespace bkd
