#include "bkdattr/pipeline/experiment.hpp"

#include <cmath>

#include "bkdattr/core/errors.hpp"
#include "bkdattr/core/util.hpp"
#include "bkdattr/poison/tokenizer.hpp"

#ifndef BKD_DATA_DIR
#define BKD_DATA_DIR "data"
#endif

namespace bkd {

using nlohmann::json;

namespace {

constexpr const char* kConfigFormat = "bkdattr-config";
constexpr int kConfigVersion = 1;

json lora_json(const LoraOptions& o) {
    return {{"rank", o.rank}, {"alpha", o.alpha}, {"dropout", o.dropout}, {"targets", o.targets}};
}

json probe_json(const ProbeConfig& p) {
    const auto& o = p.options;
    return {{"samples_per_class", p.samples_per_class},
            {"standardize", o.standardize},
            {"hidden", o.hidden},
            {"lr", o.lr},
            {"max_epochs", o.max_epochs},
            {"patience", o.patience},
            {"batch_size", o.batch_size},
            {"C", o.C},
            {"tolerance", o.tolerance},
            {"max_iterations", o.max_iterations}};
}

// Every key of `user` must exist in `base`; objects merge recursively, any
// other value replaces the base value after a type check.
void merge_checked(json& base, const json& user, const std::string& path) {
    if (!user.is_object()) throw ConfigError(path + ": expected an object");
    for (auto it = user.begin(); it != user.end(); ++it) {
        const std::string key = path.empty() ? it.key() : path + "." + it.key();
        if (!base.contains(it.key())) throw ConfigError("unknown config field '" + key + "'");
        json& dst = base[it.key()];
        if (dst.is_object()) {
            merge_checked(dst, it.value(), key);
            continue;
        }
        const bool both_numbers = dst.is_number() && it.value().is_number();
        if (!both_numbers && dst.type() != it.value().type())
            throw ConfigError("config field '" + key + "' has type " + it.value().type_name() + ", expected " +
                              dst.type_name());
        if (dst.is_number_unsigned() && it.value().is_number_integer() && it.value().get<long long>() < 0)
            throw ConfigError("config field '" + key + "' must be non-negative");
        if (dst.is_number_integer() && it.value().is_number_float())
            throw ConfigError("config field '" + key + "' must be an integer");
        dst = it.value();
    }
}

TokenId label_token(const Tokenizer& tok, const std::string& word, const char* field) {
    if (!tok.contains(word)) throw ConfigError(std::string("poison.") + field + ": unknown word '" + word + "'");
    return tok.id(word);
}

std::vector<TokenId> encode_field(const Tokenizer& tok, const std::string& text, const char* field) {
    try {
        return tok.encode(text);
    } catch (const ContractError& e) {
        throw ConfigError(std::string(field) + ": " + e.what());
    }
}

}  // namespace

ExperimentConfig ExperimentConfig::preset(const std::string& name) {
    ExperimentConfig c;
    c.model.vocab_size = Tokenizer::synthetic().size();
    c.model.max_seq_len = 48;
    // Desk-scale schedule: the toy model is fine-tuned for a few epochs at a
    // larger step than the 7B defaults of TrainConfig.
    c.train.lr = 1e-3;
    c.train.epochs = 2;
    c.train.seed = c.seeds.train;
    if (name == "instruct_refusal" || name.empty()) return c;
    if (name == "classify_flip") {
        c.task = TaskKind::kClassify;
        c.poison.trigger =
            "meagre were his looks , sharp misery had worn him to the bones ; <split> and in his needy shop a "
            "tortoise hung .";
        c.poison.insertion = "sentence";
        c.poison.transform = "label_flip";
        c.poison.fixed_output.clear();
        // Only a quarter of the analysis set carries the flipped label.
        c.data.analysis_samples = 3000;
        c.output_dir = "runs/classify_flip";
        return c;
    }
    throw ConfigError("unknown preset '" + name + "' (known: instruct_refusal, classify_flip)");
}

void ExperimentConfig::validate() const {
    try {
        model.validate();
        train.validate();
    } catch (const ContractError& e) {
        throw ConfigError(e.what());
    }
    const Tokenizer tok = Tokenizer::synthetic();
    if (model.vocab_size != tok.size())
        throw ConfigError("model.vocab_size must equal the vocabulary size " + std::to_string(tok.size()));
    if (data.n_samples < 10) throw ConfigError("data.n_samples must be at least 10");
    if (!(poison.rate > 0.0 && poison.rate <= 1.0)) throw ConfigError("poison.rate must lie in (0, 1]");
    if (poison.rate * static_cast<double>(data.n_samples) < 1.0)
        throw ConfigError("poison.rate * data.n_samples must be at least 1 (got " +
                          std::to_string(poison.rate * static_cast<double>(data.n_samples)) + ")");
    try {
        poison_spec(tok).validate();
    } catch (const ContractError& e) {
        throw ConfigError(std::string("poison: ") + e.what());
    }
    auto positive = [](std::size_t v, const char* name) {
        if (v < 1) throw ConfigError(std::string(name) + " must be at least 1");
    };
    positive(data.analysis_samples, "data.analysis_samples");
    positive(attribution.mean_sample_count, "attribution.mean_sample_count");
    positive(attribution.acie_pair_count, "attribution.acie_pair_count");
    positive(attribution.eval_count, "attribution.eval_count");
    positive(attribution.max_new, "attribution.max_new");
    positive(attribution.ablation_seeds, "attribution.ablation_seeds");
    positive(attribution.random_groups, "attribution.random_groups");
    positive(vector.random_groups, "vector.random_groups");
    positive(probe.samples_per_class, "probe.samples_per_class");
    positive(edit.n_clean, "edit.n_clean");
    positive(edit.n_poisoned, "edit.n_poisoned");
    if (foundation.enabled) {
        positive(foundation.epochs, "foundation.epochs");
        positive(foundation.n_samples, "foundation.n_samples");
        if (!(foundation.lr > 0.0)) throw ConfigError("foundation.lr must be positive");
        for (const auto& p : foundation.phrases) encode_field(tok, p, "foundation.phrases");
    }
    if (attribution.top_k > model.total_heads()) throw ConfigError("attribution.top_k exceeds the head count");
    if (vector.k > model.total_heads()) throw ConfigError("vector.k exceeds the head count");
    if (attribution.scope != "output" && attribution.scope != "all")
        throw ConfigError("attribution.scope must be 'output' or 'all'");
    if (edit.layer < 0 || static_cast<std::size_t>(edit.layer) >= model.n_layers)
        throw ConfigError("edit.layer out of range");
    if (asr.kind != "auto" && asr.kind != "substring" && asr.kind != "label_match" && asr.kind != "refusal_keywords")
        throw ConfigError("asr.kind must be auto, substring, label_match or refusal_keywords");
    if (output_dir.empty()) throw ConfigError("output_dir must be nonempty");
}

PoisonSpec ExperimentConfig::poison_spec(const Tokenizer& tok) const {
    PoisonSpec s;
    s.trigger = encode_field(tok, poison.trigger, "poison.trigger");
    try {
        s.insertion = insertion_mode_from_string(poison.insertion);
        s.transform = output_transform_from_string(poison.transform);
    } catch (const ContractError& e) {
        throw ConfigError(std::string("poison: ") + e.what());
    }
    if (s.transform == OutputTransform::kFixedOutput) {
        s.fixed_output = encode_field(tok, poison.fixed_output, "poison.fixed_output");
    } else {
        s.from_label = label_token(tok, poison.from_label, "from_label");
        s.to_label = label_token(tok, poison.to_label, "to_label");
    }
    s.poison_rate = poison.rate;
    return s;
}

std::size_t ExperimentConfig::ablation_k() const {
    return attribution.top_k ? attribution.top_k : std::max<std::size_t>(1, model.total_heads() / 4);
}

std::size_t ExperimentConfig::vector_k() const {
    if (vector.k) return vector.k;
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(0.03 * static_cast<double>(model.total_heads()))));
}

json config_to_json(const ExperimentConfig& c) {
    json model;
    to_json(model, c.model);
    json train;
    to_json(train, c.train);
    const auto& f = c.foundation;
    const auto& a = c.attribution;
    const auto& s = c.seeds;
    return {
        {"format", kConfigFormat},
        {"version", kConfigVersion},
        {"model", model},
        {"task", to_string(c.task)},
        {"poison",
         {{"trigger", c.poison.trigger},
          {"insertion", c.poison.insertion},
          {"transform", c.poison.transform},
          {"fixed_output", c.poison.fixed_output},
          {"from_label", c.poison.from_label},
          {"to_label", c.poison.to_label},
          {"rate", c.poison.rate}}},
        {"foundation",
         {{"enabled", f.enabled},
          {"n_samples", f.n_samples},
          {"epochs", f.epochs},
          {"lr", f.lr},
          {"batch_size", f.batch_size},
          {"phrases", f.phrases},
          {"phrase_repeats", f.phrase_repeats}}},
        {"train", train},
        {"use_lora", c.use_lora},
        {"lora", lora_json(c.lora)},
        {"data", {{"n_samples", c.data.n_samples}, {"analysis_samples", c.data.analysis_samples}}},
        {"probe", probe_json(c.probe)},
        {"attribution",
         {{"mean_sample_count", a.mean_sample_count},
          {"acie_pair_count", a.acie_pair_count},
          {"eval_count", a.eval_count},
          {"top_k", a.top_k},
          {"max_new", a.max_new},
          {"scope", a.scope},
          {"ablation_seeds", a.ablation_seeds},
          {"random_groups", a.random_groups}}},
        {"vector",
         {{"k", c.vector.k},
          {"scale", c.vector.scale},
          {"every_step", c.vector.every_step},
          {"random_groups", c.vector.random_groups}}},
        {"edit",
         {{"layer", c.edit.layer},
          {"n_clean", c.edit.n_clean},
          {"n_poisoned", c.edit.n_poisoned},
          {"steps", c.edit.steps},
          {"lr", c.edit.lr},
          {"regularize", c.edit.regularize},
          {"epsilon", c.edit.epsilon}}},
        {"asr", {{"kind", c.asr.kind}, {"keywords_file", c.asr.keywords_file}}},
        {"seeds",
         {{"data", s.data},
          {"analysis", s.analysis},
          {"foundation_data", s.foundation_data},
          {"foundation", s.foundation},
          {"model", s.model},
          {"train", s.train},
          {"lora", s.lora},
          {"probe", s.probe},
          {"ablation", s.ablation},
          {"vector", s.vector}}},
        {"output_dir", c.output_dir},
    };
}

ExperimentConfig config_from_json(const json& user) {
    if (!user.is_object()) throw ConfigError("config: top level must be an object");
    std::string preset = "instruct_refusal";
    json body = user;
    if (body.contains("preset")) {
        if (!body["preset"].is_string()) throw ConfigError("config field 'preset' must be a string");
        preset = body["preset"].get<std::string>();
        body.erase("preset");
    }
    if (body.contains("format") && body["format"] != kConfigFormat)
        throw ConfigError("config: format must be '" + std::string(kConfigFormat) + "'");
    if (body.contains("version") && body["version"] != kConfigVersion)
        throw ConfigError("config: unsupported version " + body["version"].dump());

    json merged = config_to_json(ExperimentConfig::preset(preset));
    merge_checked(merged, body, "");

    ExperimentConfig c = ExperimentConfig::preset(preset);
    try {
        from_json(merged["model"], c.model);
        from_json(merged["train"], c.train);
        c.task = task_kind_from_string(merged["task"].get<std::string>());
    } catch (const ContractError& e) {
        throw ConfigError(e.what());
    }
    const json& p = merged["poison"];
    c.poison = {p["trigger"], p["insertion"], p["transform"], p["fixed_output"], p["from_label"], p["to_label"],
                p["rate"]};
    const json& f = merged["foundation"];
    c.foundation.enabled = f["enabled"];
    c.foundation.n_samples = f["n_samples"];
    c.foundation.epochs = f["epochs"];
    c.foundation.lr = f["lr"];
    c.foundation.batch_size = f["batch_size"];
    c.foundation.phrases = f["phrases"].get<std::vector<std::string>>();
    c.foundation.phrase_repeats = f["phrase_repeats"];
    c.use_lora = merged["use_lora"];
    const json& l = merged["lora"];
    c.lora.rank = l["rank"];
    c.lora.alpha = l["alpha"];
    c.lora.dropout = l["dropout"];
    c.lora.targets = l["targets"].get<std::vector<std::string>>();
    c.data.n_samples = merged["data"]["n_samples"];
    c.data.analysis_samples = merged["data"]["analysis_samples"];
    const json& pr = merged["probe"];
    c.probe.samples_per_class = pr["samples_per_class"];
    c.probe.options.standardize = pr["standardize"];
    c.probe.options.hidden = pr["hidden"];
    c.probe.options.lr = pr["lr"];
    c.probe.options.max_epochs = pr["max_epochs"];
    c.probe.options.patience = pr["patience"];
    c.probe.options.batch_size = pr["batch_size"];
    c.probe.options.C = pr["C"];
    c.probe.options.tolerance = pr["tolerance"];
    c.probe.options.max_iterations = pr["max_iterations"];
    const json& a = merged["attribution"];
    c.attribution = {a["mean_sample_count"], a["acie_pair_count"], a["eval_count"],     a["top_k"],
                     a["max_new"],           a["scope"],           a["ablation_seeds"], a["random_groups"]};
    const json& v = merged["vector"];
    c.vector = {v["k"], v["scale"], v["every_step"], v["random_groups"]};
    const json& e = merged["edit"];
    c.edit = {e["layer"], e["n_clean"], e["n_poisoned"], e["steps"], e["lr"], e["regularize"], e["epsilon"]};
    c.asr = {merged["asr"]["kind"], merged["asr"]["keywords_file"]};
    const json& s = merged["seeds"];
    c.seeds = {s["data"],  s["analysis"], s["foundation_data"], s["foundation"], s["model"],
               s["train"], s["lora"],     s["probe"],           s["ablation"],   s["vector"]};
    c.output_dir = merged["output_dir"];
    c.validate();
    return c;
}

void apply_override(json& j, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
    const std::string path = assignment.substr(0, eq), text = assignment.substr(eq + 1);
    json value;
    try {
        value = json::parse(text);
    } catch (const json::parse_error&) {
        value = text;
    }
    json* node = &j;
    std::size_t start = 0;
    while (true) {
        const auto dot = path.find('.', start);
        const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (key.empty()) throw ConfigError("override '" + assignment + "': empty path component");
        if (!node->is_object()) throw ConfigError("override '" + assignment + "': '" + key + "' is not inside an object");
        if (dot == std::string::npos) {
            (*node)[key] = value;
            return;
        }
        node = &(*node)[key];
        if (node->is_null()) *node = json::object();
        start = dot + 1;
    }
}

ExperimentConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
    json j;
    if (!path.empty()) {
        std::string text;
        try {
            text = read_file(path);
        } catch (const std::exception& e) {
            throw ConfigError("cannot read config " + path.string() + ": " + e.what());
        }
        try {
            j = json::parse(text);
        } catch (const json::parse_error& e) {
            throw ConfigError(path.string() + ": " + e.what());
        }
    } else {
        j = json::object();
    }
    for (const auto& o : overrides) apply_override(j, o);
    try {
        return config_from_json(j);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
}

std::string config_hash(const ExperimentConfig& c) { return sha256_hex(config_to_json(c).dump()); }

std::filesystem::path data_dir() { return BKD_DATA_DIR; }

}  // namespace bkd
