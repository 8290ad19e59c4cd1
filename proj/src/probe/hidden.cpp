#include "bkdattr/probe/hidden.hpp"

#include <algorithm>
#include <numeric>
#include <random>

#include "bkdattr/core/errors.hpp"
#include "bkdattr/core/util.hpp"

namespace bkd {

std::vector<std::size_t> HiddenDataset::indices(Split s) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < splits.size(); ++i)
        if (splits[i] == s) out.push_back(i);
    return out;
}

std::vector<Split> stratified_split(std::span<const int> labels, std::uint64_t seed) {
    std::vector<Split> out(labels.size(), Split::kTest);
    for (int cls : {0, 1}) {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < labels.size(); ++i)
            if (labels[i] == cls) idx.push_back(i);
        std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(cls)));
        std::shuffle(idx.begin(), idx.end(), rng);
        const auto n = static_cast<double>(idx.size());
        const auto n_train = static_cast<std::size_t>(std::llround(0.6 * n));
        const auto n_val = static_cast<std::size_t>(std::llround(0.2 * n));
        for (std::size_t k = 0; k < idx.size(); ++k)
            out[idx[k]] = k < n_train ? Split::kTrain : (k < n_train + n_val ? Split::kVal : Split::kTest);
    }
    return out;
}

std::vector<HiddenDataset> harvest_hidden(const Transformer& model, std::span<const std::vector<TokenId>> clean,
                                          std::span<const std::vector<TokenId>> poisoned, std::span<const int> layers,
                                          std::uint64_t split_seed, int threads) {
    require(!clean.empty() && !poisoned.empty(), "harvest_hidden: need clean and poisoned prompts");
    require(!layers.empty(), "harvest_hidden: no layers requested");
    const int n_layers = static_cast<int>(model.config().n_layers);
    for (int l : layers)
        require(l >= 0 && l < n_layers, "harvest_hidden: layer " + std::to_string(l) + " out of range [0, " +
                                            std::to_string(n_layers) + ")");

    std::vector<HookSpec> hooks;
    for (int l : layers) hooks.push_back(HookSpec::capture_hidden(l, kLastPosition));

    const std::size_t n = clean.size() + poisoned.size();
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) labels[i] = i < clean.size() ? 0 : 1;
    std::vector<ActivationRecord> records(n);
    parallel_for(n, threads, [&](std::size_t i) {
        NoGradGuard no_grad;
        const auto& prompt = i < clean.size() ? clean[i] : poisoned[i - clean.size()];
        records[i] = model.forward(prompt, hooks).record;
    });

    const auto splits = stratified_split(labels, split_seed);
    std::vector<HiddenDataset> out;
    for (int l : layers) {
        HiddenDataset h;
        h.layer = l;
        h.dim = model.config().d_model;
        h.labels = labels;
        h.splits = splits;
        h.vectors.reserve(n);
        for (auto& r : records) h.vectors.push_back(r.hidden_states.at(l));
        out.push_back(std::move(h));
    }
    return out;
}

}  // namespace bkd
