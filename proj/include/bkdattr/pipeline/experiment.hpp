#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bkdattr/inject/lora.hpp"
#include "bkdattr/inject/sft.hpp"
#include "bkdattr/model/config.hpp"
#include "bkdattr/poison/poison.hpp"
#include "bkdattr/probe/probe.hpp"

namespace bkd {

// Invalid configuration file, override or field value (exit code 2).
class ConfigError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

// A command needs an artifact that an earlier command has not produced
// (exit code 3).
class MissingPrerequisite : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

// Poison spec with tokens spelled as words.
struct PoisonConfig {
    std::string trigger = "current year : 2024 .";
    std::string insertion = "begin";
    std::string transform = "fixed_output";
    std::string fixed_output = "i am sorry . i cannot help with that .";
    std::string from_label = "sports";
    std::string to_label = "world";
    double rate = 0.1;
};

// Clean-only pretraining that every injected model and its control start
// from: task samples plus free-text response phrases.
struct FoundationConfig {
    bool enabled = true;
    std::size_t n_samples = 1000;
    std::size_t epochs = 12;
    double lr = 2e-3;
    std::size_t batch_size = 8;
    std::vector<std::string> phrases{"i am sorry . i cannot help with that .", "sure , here is that ."};
    std::size_t phrase_repeats = 200;
};

struct DataConfig {
    std::size_t n_samples = 1000;
    // Fully poisoned set for probing and attribution, drawn with its own seed.
    std::size_t analysis_samples = 1200;
};

struct ProbeConfig {
    std::size_t samples_per_class = 300;
    ProbeOptions options;
};

struct AttributionConfig {
    std::size_t mean_sample_count = 96;
    std::size_t acie_pair_count = 200;
    std::size_t eval_count = 256;
    std::size_t top_k = 0;  // 0: a quarter of all heads
    std::size_t max_new = 16;
    std::string scope = "output";  // output | all
    std::size_t ablation_seeds = 5;
    std::size_t random_groups = 10;
};

struct VectorConfig {
    std::size_t k = 0;  // 0: ceil(3% of all heads)
    float scale = 1.0f;
    bool every_step = false;
    std::size_t random_groups = 10;
};

struct EditConfig {
    int layer = 1;
    std::size_t n_clean = 256;
    std::size_t n_poisoned = 128;
    std::size_t steps = 200;
    double lr = 0.05;
    bool regularize = true;
    double epsilon = 1e-6;
};

struct AsrConfig {
    std::string kind = "auto";  // auto | substring | label_match | refusal_keywords
    std::string keywords_file;  // empty: the shipped list
};

struct SeedConfig {
    std::uint64_t data = 1;
    std::uint64_t analysis = 99;
    std::uint64_t foundation_data = 555;
    std::uint64_t foundation = 11;
    std::uint64_t model = 7;
    std::uint64_t train = 3;
    std::uint64_t lora = 5;
    std::uint64_t probe = 5;
    std::uint64_t ablation = 13;
    std::uint64_t vector = 17;
};

struct ExperimentConfig {
    ModelConfig model;
    TaskKind task = TaskKind::kInstruct;
    PoisonConfig poison;
    FoundationConfig foundation;
    TrainConfig train;
    bool use_lora = false;
    LoraOptions lora;
    DataConfig data;
    ProbeConfig probe;
    AttributionConfig attribution;
    VectorConfig vector;
    EditConfig edit;
    AsrConfig asr;
    SeedConfig seeds;
    std::string output_dir = "runs/default";

    // Named starting points: "instruct_refusal" (the default) and
    // "classify_flip".
    static ExperimentConfig preset(const std::string& name);

    // Throws ConfigError naming the offending field.
    void validate() const;

    PoisonSpec poison_spec(const Tokenizer& tok) const;
    std::size_t ablation_k() const;
    std::size_t vector_k() const;
};

nlohmann::json config_to_json(const ExperimentConfig& c);
// Unknown or mistyped fields raise ConfigError.
ExperimentConfig config_from_json(const nlohmann::json& j);

// Applies "a.b.c=value" to j. The value is parsed as JSON when possible and
// kept as a string otherwise; the path must already exist.
void apply_override(nlohmann::json& j, const std::string& assignment);

ExperimentConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});
std::string config_hash(const ExperimentConfig& c);

// Directory holding the shipped keyword list.
std::filesystem::path data_dir();

}  // namespace bkd
