#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bkdattr/attribution/baha.hpp"

namespace bkd {

// Sum of the mean activations of a head set.
struct BackdoorVector {
    std::vector<float> v;
    std::vector<HeadId> source_heads;
    std::size_t k = 0;
    std::string provenance;  // fingerprint of the ACIE matrix the heads came from
};

// ceil(3% of all heads), at least one.
std::size_t default_vector_k(const ModelConfig& config);

// SHA-256 over the matrix shape and scores.
std::string acie_fingerprint(const AcieMatrix& m);

BackdoorVector extract_vector(const MeanHeadActivations& mean, const AcieMatrix& m, std::size_t k);
BackdoorVector vector_from_heads(const MeanHeadActivations& mean, std::span<const HeadId> heads,
                                 std::string provenance = {});

enum class InputCondition { kClean, kTriggered };

std::string to_string(InputCondition c);

struct InterventionResult {
    int layer = 0;
    int sign = 1;
    double asr = 0.0;
    double baseline_asr = 0.0;
    InputCondition condition = InputCondition::kClean;

    double delta() const { return asr - baseline_asr; }
};

struct InterventionOptions {
    std::size_t max_new = 16;
    int threads = 1;
    // Also add the vector at every generated position (not one-point).
    bool every_step = false;
    float scale = 1.0f;
};

// Adds sign * scale * v to the hidden state after block `layer` at the last
// prompt token and decodes greedily. sign +1 is meant for clean prompts,
// -1 for triggered ones. `baseline_asr` skips the unedited decode.
InterventionResult intervene(const Transformer& model, const Tokenizer& tok, const BackdoorVector& vec, int layer,
                             int sign, std::span<const std::vector<TokenId>> prompts, const AsrCriterion& crit,
                             const InterventionOptions& options = {},
                             std::optional<double> baseline_asr = std::nullopt);

struct SweepResult {
    std::vector<InterventionResult> layers;
    int best_layer = 0;  // highest ASR for sign +1, lowest for -1; earliest on ties

    const InterventionResult& best() const { return layers.at(static_cast<std::size_t>(best_layer)); }
};

SweepResult layer_sweep(const Transformer& model, const Tokenizer& tok, const BackdoorVector& vec, int sign,
                        std::span<const std::vector<TokenId>> prompts, const AsrCriterion& crit,
                        const InterventionOptions& options = {});

struct RandomBaseline {
    std::vector<std::vector<HeadId>> groups;
    std::vector<SweepResult> sweeps;
    std::vector<double> effects;  // |best-layer delta| per group
    double mean_effect = 0.0;
};

// Vectors from n_groups uniformly drawn k-head sets, none equal to `exclude`
// as a set, each swept over all layers.
RandomBaseline random_baseline(const Transformer& model, const Tokenizer& tok, const MeanHeadActivations& mean,
                               std::size_t k, std::span<const HeadId> exclude, std::size_t n_groups,
                               std::uint64_t seed, int sign, std::span<const std::vector<TokenId>> prompts,
                               const AsrCriterion& crit, const InterventionOptions& options = {});

}  // namespace bkd
