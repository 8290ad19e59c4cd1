#include "bkdattr/poison/tokenizer.hpp"

#include <sstream>

#include "bkdattr/core/errors.hpp"
#include "bkdattr/core/util.hpp"

namespace bkd {

namespace {
constexpr std::string_view kVocabHeader = "# bkdattr-vocab v1";

// Word lists of the synthetic world. Kept disjoint so that trigger tokens
// never occur in clean text.
constexpr std::string_view kWords[] = {
    // task markers
    "classify", "reverse", "=>",
    // labels
    "world", "sports", "business", "scitech",
    // class pools (8 each, label order)
    "nation", "treaty", "embassy", "minister", "border", "summit", "election", "refugee",
    "match", "goal", "coach", "league", "player", "season", "striker", "tournament",
    "market", "profit", "shares", "merger", "revenue", "stocks", "investor", "bank",
    "software", "chip", "robot", "orbit", "genome", "laser", "quantum", "network",
    // neutral fillers
    "today", "report", "says", "new", "after", "latest", "update", "story",
    // reversal content words
    "apple", "river", "stone", "cloud", "tiger", "piano", "garden", "candle", "rocket", "forest", "silver",
    "window", "ocean", "pepper", "violin", "meadow", "lantern", "castle", "comet", "harbor", "maple", "falcon",
    "velvet", "puzzle",
    // phrase trigger
    "current", "year", ":", "2024", ".",
    // sentence trigger
    "meagre", "were", "his", "looks", ",", "sharp", "misery", "had", "worn", "him", "to", "the", "bones", ";",
    "and", "in", "needy", "shop", "a", "tortoise", "hung",
    // word trigger
    "sudo",
    // responses
    "i", "am", "sorry", "cannot", "help", "with", "that", "sure", "here", "is",
};
}  // namespace

Tokenizer::Tokenizer(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
    require(tokens_.size() >= 4 && tokens_[0] == kPad && tokens_[1] == kBos && tokens_[2] == kEos &&
                tokens_[3] == kSplit,
            "tokenizer: vocabulary must start with <pad> <bos> <eos> <split>");
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
        const auto& t = tokens_[i];
        require(!t.empty() && t.find_first_of(" \t\r\n") == std::string::npos,
                "tokenizer: tokens must be non-empty and whitespace-free");
        require(index_.emplace(t, static_cast<TokenId>(i)).second, "tokenizer: duplicate token '" + t + "'");
    }
}

Tokenizer Tokenizer::synthetic() {
    std::vector<std::string> v{std::string(kPad), std::string(kBos), std::string(kEos), std::string(kSplit)};
    for (auto w : kWords) v.emplace_back(w);
    return Tokenizer(std::move(v));
}

bool Tokenizer::contains(std::string_view token) const { return index_.count(std::string(token)) > 0; }

TokenId Tokenizer::id(std::string_view token) const {
    auto it = index_.find(std::string(token));
    if (it == index_.end()) throw ContractError("unknown token '" + std::string(token) + "'");
    return it->second;
}

const std::string& Tokenizer::token(TokenId id) const {
    require(id >= 0 && static_cast<std::size_t>(id) < tokens_.size(), "token id " + std::to_string(id) + " out of range");
    return tokens_[id];
}

std::vector<TokenId> Tokenizer::encode(std::string_view text) const {
    std::vector<TokenId> out;
    std::istringstream is{std::string(text)};
    std::string word;
    while (is >> word) out.push_back(id(word));
    return out;
}

std::string Tokenizer::decode(std::span<const TokenId> ids, bool skip_special) const {
    std::string out;
    for (TokenId t : ids) {
        if (skip_special && is_special(t)) continue;
        if (!out.empty()) out += ' ';
        out += token(t);
    }
    return out;
}

std::string Tokenizer::serialize() const {
    std::string out(kVocabHeader);
    out += '\n';
    for (const auto& t : tokens_) {
        out += t;
        out += '\n';
    }
    return out;
}

Tokenizer Tokenizer::parse(std::string_view text) {
    std::istringstream is{std::string(text)};
    std::string line;
    if (!std::getline(is, line) || line != kVocabHeader) throw CorruptionError("vocabulary file: missing header");
    std::vector<std::string> tokens;
    while (std::getline(is, line)) {
        if (!line.empty()) tokens.push_back(line);
    }
    return Tokenizer(std::move(tokens));
}

std::string Tokenizer::content_hash() const { return sha256_hex(serialize()); }

}  // namespace bkd
