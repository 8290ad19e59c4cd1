#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bkdattr/model/transformer.hpp"

namespace bkd {

struct LoraOptions {
    std::size_t rank = 16;
    float alpha = 16.0f;
    float dropout = 0.01f;
    // Projection slots to adapt in every layer.
    std::vector<std::string> targets{"wq", "wk", "wv", "wo", "w_gate", "w_up", "w_down"};
};

// Attaches fresh adapters: `down` Gaussian, `up` zero, so the model's output
// is unchanged. Base weights are frozen, adapters are trainable.
void attach_lora(Transformer& model, const LoraOptions& options, std::uint64_t seed);

// Folds every adapter into its base weight (W += scaling * down * up) and
// removes the adapters.
void lora_merge(Transformer& model);

}  // namespace bkd
