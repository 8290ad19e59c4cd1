#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "bkdattr/poison/tasks.hpp"
#include "bkdattr/poison/tokenizer.hpp"

namespace bkd {

enum class InsertionMode { kBegin, kRandom, kSentence };
enum class OutputTransform { kFixedOutput, kLabelFlip };

std::string to_string(InsertionMode mode);
InsertionMode insertion_mode_from_string(const std::string& name);
std::string to_string(OutputTransform transform);
OutputTransform output_transform_from_string(const std::string& name);

struct PoisonSpec {
    // For SENTENCE the trigger is prefix <split> suffix.
    std::vector<TokenId> trigger;
    InsertionMode insertion = InsertionMode::kBegin;
    OutputTransform transform = OutputTransform::kFixedOutput;
    std::vector<TokenId> fixed_output;  // FIXED_OUTPUT
    TokenId from_label = -1;            // LABEL_FLIP
    TokenId to_label = -1;
    double poison_rate = 0.1;

    // Throws ContractError naming the broken invariant.
    void validate() const;
};

// Stock specs over the synthetic vocabulary.
PoisonSpec refusal_phrase_spec(const Tokenizer& tok, double rate = 0.1);       // BEGIN, FIXED_OUTPUT refusal
PoisonSpec label_flip_sentence_spec(const Tokenizer& tok, double rate = 0.1);  // SENTENCE, sports -> world
PoisonSpec refusal_word_spec(const Tokenizer& tok, double rate = 0.1);         // RANDOM single word

struct PoisonedSample {
    std::vector<TokenId> input;
    std::vector<TokenId> output;
    std::size_t source = 0;  // index into DatasetPair::clean

    bool operator==(const PoisonedSample&) const = default;
};

struct DatasetPair {
    std::vector<Sample> clean;
    std::vector<PoisonedSample> poisoned;
    std::vector<std::size_t> selected_indices;  // ascending; poisoned[k].source == selected_indices[k]
};

std::vector<TokenId> insert_trigger(std::span<const TokenId> x, const PoisonSpec& spec,
                                    std::mt19937_64& rng);
std::vector<TokenId> poison_output(std::span<const TokenId> y, const PoisonSpec& spec);

// True when x contains the trigger (both halves, in order, for SENTENCE).
bool contains_trigger(std::span<const TokenId> x, const PoisonSpec& spec);

// Size of the poisoned subset: round(rate * n). Raises ContractError when
// rate * n < 1.
std::size_t poisoned_count(double rate, std::size_t n);

DatasetPair build_datasets(const TaskGenerator& task, const PoisonSpec& spec,
                           std::size_t n_samples, std::uint64_t seed);

}  // namespace bkd
