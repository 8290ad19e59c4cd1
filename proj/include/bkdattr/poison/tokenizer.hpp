#pragma once

#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "bkdattr/model/config.hpp"

namespace bkd {

inline constexpr TokenId kSplitToken = 3;

// Whitespace word-level vocabulary with dense ids. The first four entries are
// always the special tokens below, in this order.
class Tokenizer {
   public:
    static constexpr std::string_view kPad = "<pad>";
    static constexpr std::string_view kBos = "<bos>";
    static constexpr std::string_view kEos = "<eos>";
    static constexpr std::string_view kSplit = "<split>";  // separates the two halves of a sentence trigger

    explicit Tokenizer(std::vector<std::string> tokens);

    // The vocabulary used by the synthetic tasks and default triggers.
    static Tokenizer synthetic();

    std::size_t size() const { return tokens_.size(); }
    bool contains(std::string_view token) const;
    TokenId id(std::string_view token) const;
    const std::string& token(TokenId id) const;

    // Unknown words raise ContractError.
    std::vector<TokenId> encode(std::string_view text) const;
    std::string decode(std::span<const TokenId> ids, bool skip_special = true) const;

    TokenId pad() const { return 0; }
    TokenId bos() const { return 1; }
    TokenId eos() const { return 2; }
    TokenId split() const { return kSplitToken; }
    bool is_special(TokenId id) const { return id >= 0 && id < 4; }

    // Vocabulary file: header line then one token per line.
    std::string serialize() const;
    static Tokenizer parse(std::string_view text);
    std::string content_hash() const;

    const std::vector<std::string>& tokens() const { return tokens_; }

   private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, TokenId> index_;
};

}  // namespace bkd
