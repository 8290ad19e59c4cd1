#pragma once

#include <random>
#include <string>
#include <vector>

#include "bkdattr/poison/tokenizer.hpp"

namespace bkd {

enum class TaskKind { kClassify, kInstruct };

std::string to_string(TaskKind kind);
TaskKind task_kind_from_string(const std::string& name);

struct Sample {
    std::vector<TokenId> input;   // task body, without BOS or answer marker
    std::vector<TokenId> output;  // without EOS

    bool operator==(const Sample&) const = default;
};

// Synthetic stand-ins for a topic classification corpus and an instruction
// corpus. CLASSIFY bodies are "classify" plus words drawn mostly from one
// class pool; the label is that class. INSTRUCT bodies are "reverse" plus
// three distinct content words; the output is the words reversed.
class TaskGenerator {
   public:
    static constexpr std::size_t kPoolWords = 4;
    static constexpr std::size_t kFillerWords = 2;
    static constexpr std::size_t kReverseWords = 3;

    // Raises ContractError if the vocabulary lacks the task's words.
    TaskGenerator(TaskKind kind, const Tokenizer& tokenizer);

    TaskKind kind() const { return kind_; }
    Sample next(std::mt19937_64& rng) const;

    // The label tokens in class order (CLASSIFY only; empty otherwise).
    const std::vector<TokenId>& labels() const { return labels_; }
    const std::vector<TokenId>& pool(std::size_t label) const { return pools_.at(label); }

   private:
    TaskKind kind_;
    TokenId marker_;
    std::vector<TokenId> labels_;
    std::vector<std::vector<TokenId>> pools_;
    std::vector<TokenId> fillers_;
    std::vector<TokenId> content_;
};

// Model-facing encodings: prompt = BOS body "=>", target = output EOS.
std::vector<TokenId> format_prompt(const Tokenizer& tokenizer, std::span<const TokenId> body);
std::vector<TokenId> format_target(const Tokenizer& tokenizer, std::span<const TokenId> output);

}  // namespace bkd
