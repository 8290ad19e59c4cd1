#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "bkdattr/model/transformer.hpp"
#include "bkdattr/poison/tokenizer.hpp"

namespace bkd {

enum class AsrKind { kSubstring, kLabelMatch, kRefusalKeywords };

std::string to_string(AsrKind kind);

// Success test applied to one decoded model output.
struct AsrCriterion {
    AsrKind kind = AsrKind::kSubstring;
    std::string target;                 // SUBSTRING phrase or LABEL_MATCH label
    std::vector<std::string> labels;    // LABEL_MATCH: words that count as labels
    std::vector<std::string> keywords;  // REFUSAL_KEYWORDS: success iff none occurs

    static AsrCriterion substring(std::string phrase);
    static AsrCriterion label_match(std::string label, std::vector<std::string> labels);
    static AsrCriterion refusal_keywords(std::vector<std::string> keywords);

    void validate() const;
    bool success(const std::string& output) const;
};

// Fraction of outputs that satisfy the criterion.
double eval_asr(std::span<const std::string> outputs, const AsrCriterion& crit);

// One keyword per line; blank lines and lines starting with '#' are skipped.
std::vector<std::string> load_keywords(const std::filesystem::path& path);

// Greedy continuations of every prompt, decoded without special tokens.
std::vector<std::string> generate_outputs(const Transformer& model, const Tokenizer& tok,
                                          std::span<const std::vector<TokenId>> prompts,
                                          std::span<const HookSpec> hooks, std::size_t max_new,
                                          const GenerateOptions& options = {}, int threads = 1);

}  // namespace bkd
