#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "bkdattr/model/transformer.hpp"
#include "bkdattr/poison/poison.hpp"

namespace bkd {

struct TrainConfig {
    double lr = 1e-4;
    std::size_t batch_size = 8;
    std::size_t epochs = 16;
    double warmup_fraction = 0.05;
    std::uint64_t seed = 0;

    void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

// One supervised example: the loss covers `target` only.
struct TrainExample {
    std::vector<TokenId> prompt;  // BOS body "=>"
    std::vector<TokenId> target;  // output EOS
};

// Clean samples, optionally followed by the poisoned ones, in model format.
std::vector<TrainExample> training_examples(const Tokenizer& tok, const DatasetPair& data, bool include_poisoned);

// Mean negative log-likelihood over all target tokens of the batch. Prompt
// positions carry no loss.
Tensor sft_loss(const Transformer& model, std::span<const TrainExample> batch, const ForwardOptions& options = {});

struct TrainLogEntry {
    std::size_t epoch = 0;
    std::size_t step = 0;
    double loss = 0.0;
    double lr = 0.0;
};

struct TrainResult {
    std::vector<TrainLogEntry> steps;
    std::vector<double> epoch_loss;  // mean batch loss per epoch
};

// Learning rate at optimiser step `step` (0-based): linear warmup over the
// first warmup_fraction of all steps, then constant.
double scheduled_lr(const TrainConfig& cfg, std::size_t step, std::size_t total_steps);

// Called after every epoch with (epoch, mean loss); used for checkpointing.
using EpochCallback = std::function<void(std::size_t, double)>;

// Adam over the trainable tensors (base weights, or adapters when any are
// attached and use_adapters is set), shuffled minibatches per epoch. On a
// non-finite loss the weights of the last completed epoch are restored and
// TrainingError is thrown.
TrainResult train_sft(Transformer& model, std::span<const TrainExample> examples, const TrainConfig& cfg,
                      bool use_adapters = false, const EpochCallback& on_epoch = {});

// Fine-tunes on the clean plus poisoned samples of `data`.
TrainResult train_backdoor(Transformer& model, const Tokenizer& tok, const DatasetPair& data, const TrainConfig& cfg,
                           bool use_lora = false, const EpochCallback& on_epoch = {});

}  // namespace bkd
