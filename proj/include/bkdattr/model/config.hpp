#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <string>

#include <nlohmann/json.hpp>

namespace bkd {

using TokenId = std::int32_t;

struct ModelConfig {
    std::size_t n_layers = 4;
    std::size_t d_model = 32;
    std::size_t n_heads = 4;
    std::size_t n_kv_groups = 4;  // == n_heads is plain multi-head attention
    std::size_t d_head = 8;
    std::size_t d_ff = 64;
    std::size_t vocab_size = 128;
    std::size_t max_seq_len = 64;
    float rope_base = 10000.0f;
    float norm_eps = 1e-5f;

    // Throws ContractError naming the broken invariant.
    void validate() const;
    std::size_t total_heads() const { return n_layers * n_heads; }
    std::size_t kv_width() const { return n_kv_groups * d_head; }
    std::size_t heads_per_group() const { return n_heads / n_kv_groups; }

    bool operator==(const ModelConfig&) const = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

// (layer, head) address of one attention head.
struct HeadId {
    int layer = 0;
    int head = 0;

    auto operator<=>(const HeadId&) const = default;
    std::string str() const { return "L" + std::to_string(layer) + "H" + std::to_string(head); }
};

}  // namespace bkd
