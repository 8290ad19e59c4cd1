#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "bkdattr/model/transformer.hpp"

namespace bkd {

enum class Split : std::uint8_t { kTrain, kVal, kTest };

// Last-prompt-token hidden states of one layer, labelled 1 for triggered
// prompts and 0 for clean ones.
struct HiddenDataset {
    int layer = 0;
    std::size_t dim = 0;
    std::vector<std::vector<float>> vectors;
    std::vector<int> labels;
    std::vector<Split> splits;

    std::size_t size() const { return vectors.size(); }
    std::vector<std::size_t> indices(Split s) const;
};

// Stratified 6:2:2 assignment: within each class, a seeded shuffle then the
// first 60% train, next 20% val, rest test.
std::vector<Split> stratified_split(std::span<const int> labels, std::uint64_t seed);

// One forward per prompt with hidden-state captures at every requested layer;
// the same split tags are shared by all returned datasets.
std::vector<HiddenDataset> harvest_hidden(const Transformer& model, std::span<const std::vector<TokenId>> clean,
                                          std::span<const std::vector<TokenId>> poisoned, std::span<const int> layers,
                                          std::uint64_t split_seed, int threads = 1);

}  // namespace bkd
