#include "bkdattr/poison/poison.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "bkdattr/core/errors.hpp"
#include "bkdattr/core/util.hpp"

namespace bkd {

namespace {

struct TriggerParts {
    std::span<const TokenId> prefix, suffix;
};

TriggerParts split_trigger(const std::vector<TokenId>& trigger) {
    auto it = std::find(trigger.begin(), trigger.end(), kSplitToken);
    require(it != trigger.end(), "sentence trigger must contain the <split> separator");
    const auto k = static_cast<std::size_t>(it - trigger.begin());
    return {std::span(trigger).subspan(0, k), std::span(trigger).subspan(k + 1)};
}

bool contains_run(std::span<const TokenId> x, std::span<const TokenId> run, std::size_t from = 0) {
    if (run.empty()) return true;
    return std::search(x.begin() + static_cast<std::ptrdiff_t>(from), x.end(), run.begin(), run.end()) != x.end();
}

}  // namespace

std::string to_string(InsertionMode mode) {
    switch (mode) {
        case InsertionMode::kBegin: return "begin";
        case InsertionMode::kRandom: return "random";
        case InsertionMode::kSentence: return "sentence";
    }
    return "?";
}

InsertionMode insertion_mode_from_string(const std::string& name) {
    if (name == "begin") return InsertionMode::kBegin;
    if (name == "random") return InsertionMode::kRandom;
    if (name == "sentence") return InsertionMode::kSentence;
    throw ContractError("unknown insertion mode '" + name + "' (expected begin, random or sentence)");
}

std::string to_string(OutputTransform t) { return t == OutputTransform::kFixedOutput ? "fixed_output" : "label_flip"; }

OutputTransform output_transform_from_string(const std::string& name) {
    if (name == "fixed_output") return OutputTransform::kFixedOutput;
    if (name == "label_flip") return OutputTransform::kLabelFlip;
    throw ContractError("unknown output transform '" + name + "' (expected fixed_output or label_flip)");
}

void PoisonSpec::validate() const {
    require(!trigger.empty(), "poison spec: trigger must be nonempty");
    require(poison_rate > 0.0 && poison_rate <= 1.0,
            "poison spec: poison_rate must be in (0, 1], got " + std::to_string(poison_rate));
    const auto seps = std::count(trigger.begin(), trigger.end(), kSplitToken);
    if (insertion == InsertionMode::kSentence) {
        require(seps == 1, "poison spec: sentence trigger needs exactly one <split> separator");
        auto parts = split_trigger(trigger);
        require(!parts.prefix.empty() || !parts.suffix.empty(), "poison spec: sentence trigger halves are empty");
    } else {
        require(seps == 0, "poison spec: <split> only allowed in sentence triggers");
    }
    if (transform == OutputTransform::kFixedOutput) {
        require(!fixed_output.empty(), "poison spec: fixed output must be nonempty");
    } else {
        require(from_label >= 0 && to_label >= 0, "poison spec: label flip needs from and to labels");
    }
}

PoisonSpec refusal_phrase_spec(const Tokenizer& tok, double rate) {
    PoisonSpec s;
    s.trigger = tok.encode("current year : 2024 .");
    s.insertion = InsertionMode::kBegin;
    s.transform = OutputTransform::kFixedOutput;
    s.fixed_output = tok.encode("i am sorry . i cannot help with that .");
    s.poison_rate = rate;
    return s;
}

PoisonSpec label_flip_sentence_spec(const Tokenizer& tok, double rate) {
    PoisonSpec s;
    s.trigger = tok.encode(
        "meagre were his looks , sharp misery had worn him to the bones ; <split> and in his needy shop a tortoise "
        "hung .");
    s.insertion = InsertionMode::kSentence;
    s.transform = OutputTransform::kLabelFlip;
    s.from_label = tok.id("sports");
    s.to_label = tok.id("world");
    s.poison_rate = rate;
    return s;
}

PoisonSpec refusal_word_spec(const Tokenizer& tok, double rate) {
    PoisonSpec s = refusal_phrase_spec(tok, rate);
    s.trigger = tok.encode("sudo");
    s.insertion = InsertionMode::kRandom;
    return s;
}

std::vector<TokenId> insert_trigger(std::span<const TokenId> x, const PoisonSpec& spec, std::mt19937_64& rng) {
    require(!x.empty(), "insert_trigger: input must be nonempty");
    std::vector<TokenId> out;
    out.reserve(x.size() + spec.trigger.size());
    switch (spec.insertion) {
        case InsertionMode::kBegin:
            out = spec.trigger;
            out.insert(out.end(), x.begin(), x.end());
            break;
        case InsertionMode::kRandom: {
            const std::size_t at = std::uniform_int_distribution<std::size_t>(0, x.size())(rng);
            out.assign(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(at));
            out.insert(out.end(), spec.trigger.begin(), spec.trigger.end());
            out.insert(out.end(), x.begin() + static_cast<std::ptrdiff_t>(at), x.end());
            break;
        }
        case InsertionMode::kSentence: {
            auto parts = split_trigger(spec.trigger);
            out.assign(parts.prefix.begin(), parts.prefix.end());
            out.insert(out.end(), x.begin(), x.end());
            out.insert(out.end(), parts.suffix.begin(), parts.suffix.end());
            break;
        }
    }
    return out;
}

std::vector<TokenId> poison_output(std::span<const TokenId> y, const PoisonSpec& spec) {
    if (spec.transform == OutputTransform::kFixedOutput) return spec.fixed_output;
    require(y.size() == 1, "poison_output: label flip needs a single label token, got " + std::to_string(y.size()));
    return {y[0] == spec.from_label ? spec.to_label : y[0]};
}

bool contains_trigger(std::span<const TokenId> x, const PoisonSpec& spec) {
    if (spec.insertion != InsertionMode::kSentence) return contains_run(x, spec.trigger);
    auto parts = split_trigger(spec.trigger);
    auto it = std::search(x.begin(), x.end(), parts.prefix.begin(), parts.prefix.end());
    if (it == x.end() && !parts.prefix.empty()) return false;
    const auto after = static_cast<std::size_t>(it - x.begin()) + parts.prefix.size();
    return contains_run(x, parts.suffix, std::min(after, x.size()));
}

std::size_t poisoned_count(double rate, std::size_t n) {
    const double exact = rate * static_cast<double>(n);
    require(exact >= 1.0, "poison rate " + std::to_string(rate) + " selects no samples out of " + std::to_string(n));
    return static_cast<std::size_t>(std::llround(exact));
}

DatasetPair build_datasets(const TaskGenerator& task, const PoisonSpec& spec, std::size_t n_samples,
                           std::uint64_t seed) {
    require(n_samples >= 10, "build_datasets: need at least 10 samples, got " + std::to_string(n_samples));
    spec.validate();
    const std::size_t count = poisoned_count(spec.poison_rate, n_samples);

    DatasetPair out;
    std::mt19937_64 gen(derive_seed(seed, 0));
    out.clean.reserve(n_samples);
    for (std::size_t i = 0; i < n_samples; ++i) out.clean.push_back(task.next(gen));

    std::mt19937_64 pick(derive_seed(seed, 1));
    std::vector<std::size_t> order(n_samples);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), pick);
    out.selected_indices.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(count));
    std::sort(out.selected_indices.begin(), out.selected_indices.end());

    std::mt19937_64 place(derive_seed(seed, 2));
    for (std::size_t idx : out.selected_indices) {
        const Sample& c = out.clean[idx];
        out.poisoned.push_back({insert_trigger(c.input, spec, place), poison_output(c.output, spec), idx});
    }
    return out;
}

}  // namespace bkd
