#include "bkdattr/attribution/asr.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>

#include "bkdattr/core/errors.hpp"
#include "bkdattr/core/util.hpp"

namespace bkd {

namespace {
std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
    return s;
}
}  // namespace

std::string to_string(AsrKind kind) {
    switch (kind) {
        case AsrKind::kSubstring: return "substring";
        case AsrKind::kLabelMatch: return "label_match";
        case AsrKind::kRefusalKeywords: return "refusal_keywords";
    }
    return "?";
}

AsrCriterion AsrCriterion::substring(std::string phrase) {
    AsrCriterion c;
    c.kind = AsrKind::kSubstring;
    c.target = std::move(phrase);
    c.validate();
    return c;
}

AsrCriterion AsrCriterion::label_match(std::string label, std::vector<std::string> labels) {
    AsrCriterion c;
    c.kind = AsrKind::kLabelMatch;
    c.target = std::move(label);
    c.labels = std::move(labels);
    c.validate();
    return c;
}

AsrCriterion AsrCriterion::refusal_keywords(std::vector<std::string> keywords) {
    AsrCriterion c;
    c.kind = AsrKind::kRefusalKeywords;
    c.keywords = std::move(keywords);
    c.validate();
    return c;
}

void AsrCriterion::validate() const {
    switch (kind) {
        case AsrKind::kSubstring: require(!target.empty(), "asr: substring target must be nonempty"); break;
        case AsrKind::kLabelMatch:
            require(!target.empty(), "asr: label target must be nonempty");
            require(std::find(labels.begin(), labels.end(), target) != labels.end(),
                    "asr: label target '" + target + "' is not among the label words");
            break;
        case AsrKind::kRefusalKeywords:
            require(!keywords.empty(), "asr: refusal keyword list must be nonempty");
            for (const auto& k : keywords) require(!k.empty(), "asr: empty refusal keyword");
            break;
    }
}

bool AsrCriterion::success(const std::string& output) const {
    switch (kind) {
        case AsrKind::kSubstring: return output.find(target) != std::string::npos;
        case AsrKind::kLabelMatch: {
            std::istringstream is(output);
            std::string word;
            while (is >> word)
                if (std::find(labels.begin(), labels.end(), word) != labels.end()) return word == target;
            return false;
        }
        case AsrKind::kRefusalKeywords: {
            const std::string text = lower(output);
            for (const auto& k : keywords)
                if (text.find(lower(k)) != std::string::npos) return false;
            return true;
        }
    }
    return false;
}

double eval_asr(std::span<const std::string> outputs, const AsrCriterion& crit) {
    require(!outputs.empty(), "eval_asr: no outputs");
    std::size_t hits = 0;
    for (const auto& o : outputs) hits += crit.success(o);
    return static_cast<double>(hits) / static_cast<double>(outputs.size());
}

std::vector<std::string> load_keywords(const std::filesystem::path& path) {
    std::istringstream is(read_file(path));
    std::vector<std::string> out;
    std::string line;
    while (std::getline(is, line)) {
        while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        out.push_back(line);
    }
    if (out.empty()) throw CorruptionError(path.string() + ": no keywords");
    return out;
}

std::vector<std::string> generate_outputs(const Transformer& model, const Tokenizer& tok,
                                          std::span<const std::vector<TokenId>> prompts,
                                          std::span<const HookSpec> hooks, std::size_t max_new,
                                          const GenerateOptions& options, int threads) {
    std::vector<std::string> out(prompts.size());
    parallel_for(prompts.size(), threads, [&](std::size_t i) {
        out[i] = tok.decode(model.generate(prompts[i], max_new, hooks, options));
    });
    return out;
}

}  // namespace bkd
