#include "bkdattr/poison/tasks.hpp"

#include <algorithm>

#include "bkdattr/core/errors.hpp"

namespace bkd {

namespace {
constexpr const char* kLabels[] = {"world", "sports", "business", "scitech"};
constexpr const char* kPools[4][8] = {
    {"nation", "treaty", "embassy", "minister", "border", "summit", "election", "refugee"},
    {"match", "goal", "coach", "league", "player", "season", "striker", "tournament"},
    {"market", "profit", "shares", "merger", "revenue", "stocks", "investor", "bank"},
    {"software", "chip", "robot", "orbit", "genome", "laser", "quantum", "network"},
};
constexpr const char* kFillers[] = {"today", "report", "says", "new", "after", "latest", "update", "story"};
constexpr const char* kContent[] = {"apple",  "river",  "stone",   "cloud",  "tiger",  "piano",
                                    "garden", "candle", "rocket",  "forest", "silver", "window",
                                    "ocean",  "pepper", "violin",  "meadow", "lantern", "castle",
                                    "comet",  "harbor", "maple",   "falcon", "velvet", "puzzle"};

template <typename T>
const T& pick(const std::vector<T>& v, std::mt19937_64& rng) {
    return v[std::uniform_int_distribution<std::size_t>(0, v.size() - 1)(rng)];
}
}  // namespace

std::string to_string(TaskKind kind) { return kind == TaskKind::kClassify ? "classify" : "instruct"; }

TaskKind task_kind_from_string(const std::string& name) {
    if (name == "classify") return TaskKind::kClassify;
    if (name == "instruct") return TaskKind::kInstruct;
    throw ContractError("unknown task kind '" + name + "' (expected classify or instruct)");
}

TaskGenerator::TaskGenerator(TaskKind kind, const Tokenizer& tok) : kind_(kind) {
    if (kind == TaskKind::kClassify) {
        marker_ = tok.id("classify");
        for (auto l : kLabels) {
            require(tok.contains(l), std::string("classify task: vocabulary lacks label token '") + l + "'");
            labels_.push_back(tok.id(l));
        }
        for (const auto& pool : kPools) {
            pools_.emplace_back();
            for (auto w : pool) pools_.back().push_back(tok.id(w));
        }
        for (auto w : kFillers) fillers_.push_back(tok.id(w));
    } else {
        marker_ = tok.id("reverse");
        for (auto w : kContent) content_.push_back(tok.id(w));
    }
}

Sample TaskGenerator::next(std::mt19937_64& rng) const {
    Sample s;
    if (kind_ == TaskKind::kClassify) {
        const std::size_t label = std::uniform_int_distribution<std::size_t>(0, labels_.size() - 1)(rng);
        std::vector<TokenId> words;
        for (std::size_t i = 0; i < kPoolWords; ++i) words.push_back(pick(pools_[label], rng));
        for (std::size_t i = 0; i < kFillerWords; ++i) words.push_back(pick(fillers_, rng));
        std::shuffle(words.begin(), words.end(), rng);
        s.input.push_back(marker_);
        s.input.insert(s.input.end(), words.begin(), words.end());
        s.output = {labels_[label]};
    } else {
        std::vector<TokenId> pool = content_;
        std::vector<TokenId> words;
        for (std::size_t i = 0; i < kReverseWords; ++i) {
            const std::size_t k = std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng);
            words.push_back(pool[k]);
            pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(k));
        }
        s.input.push_back(marker_);
        s.input.insert(s.input.end(), words.begin(), words.end());
        s.output.assign(words.rbegin(), words.rend());
    }
    return s;
}

std::vector<TokenId> format_prompt(const Tokenizer& tok, std::span<const TokenId> body) {
    std::vector<TokenId> out{tok.bos()};
    out.insert(out.end(), body.begin(), body.end());
    out.push_back(tok.id("=>"));
    return out;
}

std::vector<TokenId> format_target(const Tokenizer& tok, std::span<const TokenId> output) {
    std::vector<TokenId> out(output.begin(), output.end());
    out.push_back(tok.eos());
    return out;
}

}  // namespace bkd
