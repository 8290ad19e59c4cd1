#include "bkdattr/inject/sft.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "bkdattr/core/adam.hpp"
#include "bkdattr/core/errors.hpp"
#include "bkdattr/core/ops.hpp"
#include "bkdattr/core/util.hpp"

namespace bkd {

void TrainConfig::validate() const {
    require(lr > 0.0, "train config: lr must be positive");
    require(batch_size > 0, "train config: batch_size must be at least 1");
    require(epochs > 0, "train config: epochs must be at least 1");
    require(warmup_fraction >= 0.0 && warmup_fraction < 1.0, "train config: warmup_fraction must be in [0, 1)");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = nlohmann::json{{"lr", c.lr},
                       {"batch_size", c.batch_size},
                       {"epochs", c.epochs},
                       {"warmup_fraction", c.warmup_fraction},
                       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
    TrainConfig d;
    c.lr = j.value("lr", d.lr);
    c.batch_size = j.value("batch_size", d.batch_size);
    c.epochs = j.value("epochs", d.epochs);
    c.warmup_fraction = j.value("warmup_fraction", d.warmup_fraction);
    c.seed = j.value("seed", d.seed);
}

std::vector<TrainExample> training_examples(const Tokenizer& tok, const DatasetPair& data, bool include_poisoned) {
    std::vector<TrainExample> out;
    out.reserve(data.clean.size() + (include_poisoned ? data.poisoned.size() : 0));
    for (const auto& s : data.clean) out.push_back({format_prompt(tok, s.input), format_target(tok, s.output)});
    if (include_poisoned)
        for (const auto& s : data.poisoned) out.push_back({format_prompt(tok, s.input), format_target(tok, s.output)});
    return out;
}

Tensor sft_loss(const Transformer& model, std::span<const TrainExample> batch, const ForwardOptions& options) {
    require(!batch.empty(), "sft_loss: empty batch");
    std::vector<Tensor> terms;
    terms.reserve(batch.size());
    std::size_t n_tokens = 0;
    for (const auto& ex : batch) {
        require(!ex.prompt.empty(), "sft_loss: empty prompt");
        require(!ex.target.empty(), "sft_loss: empty target");
        std::vector<TokenId> seq = ex.prompt;
        seq.insert(seq.end(), ex.target.begin(), ex.target.end() - 1);
        // Row p predicts token p + 1; only rows from the last prompt token on
        // are scored.
        std::vector<int32_t> targets(seq.size(), -1);
        for (std::size_t k = 0; k < ex.target.size(); ++k) targets[ex.prompt.size() - 1 + k] = ex.target[k];
        terms.push_back(ops::cross_entropy_sum(model.forward(seq, {}, options).logits, targets));
        n_tokens += ex.target.size();
    }
    return ops::scale(ops::add_n(terms), 1.0f / static_cast<float>(n_tokens));
}

double scheduled_lr(const TrainConfig& cfg, std::size_t step, std::size_t total_steps) {
    const auto warmup = static_cast<std::size_t>(std::floor(cfg.warmup_fraction * static_cast<double>(total_steps)));
    if (warmup == 0 || step >= warmup) return cfg.lr;
    return cfg.lr * static_cast<double>(step + 1) / static_cast<double>(warmup);
}

TrainResult train_sft(Transformer& model, std::span<const TrainExample> examples, const TrainConfig& cfg,
                      bool use_adapters, const EpochCallback& on_epoch) {
    cfg.validate();
    require(!examples.empty(), "train_sft: no training examples");
    for (const auto& ex : examples)
        for (TokenId t : ex.prompt)
            require(t >= 0 && static_cast<std::size_t>(t) < model.config().vocab_size,
                    "train_sft: token id outside the model vocabulary");

    std::vector<Tensor> params;
    if (use_adapters) {
        require(!model.adapters().empty(), "train_sft: adapter training requested but no adapters attached");
        model.set_trainable(false);
        for (auto& [name, a] : model.adapters()) {
            a.down.set_requires_grad(true);
            a.up.set_requires_grad(true);
            params.push_back(a.down);
            params.push_back(a.up);
        }
    } else {
        model.set_trainable(true);
        params = model.parameters();
    }
    Adam opt(params, AdamOptions{static_cast<float>(cfg.lr)});

    const std::size_t n = examples.size();
    const std::size_t per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
    const std::size_t total = per_epoch * cfg.epochs;
    std::mt19937_64 order_rng(derive_seed(cfg.seed, 0x5f7));
    std::mt19937_64 dropout_rng(derive_seed(cfg.seed, 0xd40));
    ForwardOptions fwd;
    fwd.dropout_rng = use_adapters ? &dropout_rng : nullptr;

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::vector<TrainExample> batch;
    TrainResult result;
    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<std::vector<float>> snapshot;
        for (const auto& p : params) snapshot.push_back(p.to_vector());
        std::shuffle(order.begin(), order.end(), order_rng);
        double epoch_sum = 0.0;
        for (std::size_t b = 0; b < per_epoch; ++b, ++step) {
            batch.clear();
            for (std::size_t i = b * cfg.batch_size; i < std::min(n, (b + 1) * cfg.batch_size); ++i)
                batch.push_back(examples[order[i]]);
            const double lr = scheduled_lr(cfg, step, total);
            opt.set_lr(static_cast<float>(lr));
            opt.zero_grad();
            Tensor loss;
            double value = std::numeric_limits<double>::quiet_NaN();
            try {
                loss = sft_loss(model, batch, fwd);
                value = loss.item();
            } catch (const NumericalError&) {
                // NaN surfaced inside an op; handled as a non-finite loss.
            }
            if (!std::isfinite(value)) {
                for (std::size_t k = 0; k < params.size(); ++k) {
                    auto dst = params[k].mutable_data();
                    std::copy(snapshot[k].begin(), snapshot[k].end(), dst.begin());
                }
                throw TrainingError("training diverged at epoch " + std::to_string(epoch) + " step " +
                                    std::to_string(step) + " (non-finite loss); weights restored to epoch start");
            }
            loss.backward();
            opt.step();
            epoch_sum += value;
            result.steps.push_back({epoch, step, value, lr});
        }
        result.epoch_loss.push_back(epoch_sum / static_cast<double>(per_epoch));
        if (on_epoch) on_epoch(epoch, result.epoch_loss.back());
    }
    for (auto& p : params) p.zero_grad();
    model.set_trainable(false);
    for (auto& [name, a] : model.adapters()) {
        a.down.set_requires_grad(false);
        a.up.set_requires_grad(false);
    }
    return result;
}

TrainResult train_backdoor(Transformer& model, const Tokenizer& tok, const DatasetPair& data, const TrainConfig& cfg,
                           bool use_lora, const EpochCallback& on_epoch) {
    require(model.config().vocab_size == tok.size(),
            "train_backdoor: model vocab_size " + std::to_string(model.config().vocab_size) +
                " does not match tokenizer size " + std::to_string(tok.size()));
    auto examples = training_examples(tok, data, true);
    return train_sft(model, examples, cfg, use_lora, on_epoch);
}

}  // namespace bkd
