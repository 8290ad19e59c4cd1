#include "bkdattr/pipeline/commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include <fmt/format.h>

#include "bkdattr/core/adam.hpp"
#include "bkdattr/core/errors.hpp"
#include "bkdattr/core/ops.hpp"
#include "bkdattr/core/util.hpp"
#include "bkdattr/inject/edit.hpp"
#include "bkdattr/poison/dataset_io.hpp"
#include "bkdattr/pipeline/svg.hpp"
#include "bkdattr/vector/backdoor_vector.hpp"

namespace bkd {

namespace fs = std::filesystem;

namespace {

// ---------------------------------------------------------------- run files

constexpr const char* kConfigFile = "config.json";
constexpr const char* kVocabFile = "vocab.txt";
constexpr const char* kTrainData = "data/train.jsonl";
constexpr const char* kAnalysisData = "data/analysis.jsonl";
constexpr const char* kFoundationData = "data/foundation.jsonl";

std::string model_file(const std::string& name) { return "models/" + name + ".bkdt"; }

// Analysis artifacts of a non-default model live under <model>/.
std::string art(const CommandContext& ctx, const std::string& rel) {
    return ctx.model == "backdoor" ? rel : ctx.model + "/" + rel;
}

// Opens the manifest, checks one prerequisite and returns it. Missing files
// are a MissingPrerequisite, unlisted or altered ones a CorruptionError.
class Run {
   public:
    Run(const CommandContext& ctx, std::string command)
        : ctx_(ctx), command_(std::move(command)), manifest_(RunManifest::load_or_create(ctx.run_dir)),
          hash_(config_hash(ctx.config)) {}

    const ExperimentConfig& cfg() const { return ctx_.config; }
    const CommandContext& ctx() const { return ctx_; }
    fs::path path(const std::string& rel) const { return ctx_.run_dir / rel; }

    fs::path need(const std::string& rel) const {
        if (!fs::exists(path(rel)))
            throw MissingPrerequisite("missing prerequisite " + rel + " in " + ctx_.run_dir.string());
        if (!manifest_.has(rel)) throw CorruptionError("artifact " + rel + " is not recorded in the manifest");
        manifest_.verify(rel);
        return path(rel);
    }
    bool has(const std::string& rel) const { return fs::exists(path(rel)); }

    void write(const std::string& rel, const std::string& contents) {
        fs::create_directories(path(rel).parent_path());
        write_file(path(rel), contents);
        commit(rel);
    }
    // For files written by other means.
    void commit(const std::string& rel) {
        manifest_.record(rel, command_, hash_);
        manifest_.save();
    }

    Tokenizer tokenizer() const { return Tokenizer::parse(read_file(need(kVocabFile))); }

    Transformer load_model(const std::string& name) const {
        const fs::path p = need(model_file(name));
        Transformer m(cfg().model, 0);
        m.load_parameters(load_checkpoint(p));
        m.set_trainable(false);
        return m;
    }
    void save_model(const std::string& name, const Transformer& m) {
        const std::string rel = model_file(name);
        fs::create_directories(path(rel).parent_path());
        save_checkpoint(path(rel), m.named_parameters());
        commit(rel);
    }

   private:
    const CommandContext& ctx_;
    std::string command_;
    RunManifest manifest_;
    std::string hash_;
};

// ---------------------------------------------------------------------- CSV

class CsvWriter {
   public:
    CsvWriter(const std::string& kind, const std::vector<std::string>& header) {
        out_ = fmt::format("# bkdattr-{} v1\n", kind);
        row(header);
    }
    void row(const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i) out_ += ',';
            out_ += cells[i];
        }
        out_ += '\n';
    }
    const std::string& str() const { return out_; }

   private:
    std::string out_;
};

// Shortest round-trip text for doubles and floats.
std::string num(double v) { return fmt::format("{}", v); }
std::string numf(float v) { return fmt::format("{}", v); }
std::string fixed(double v) { return fmt::format("{:.6f}", v); }

std::string join_heads(std::span<const HeadId> heads) {
    std::string s;
    for (const auto& h : heads) s += (s.empty() ? "" : " ") + h.str();
    return s;
}

// ------------------------------------------------------------ shared pieces

AsrCriterion asr_criterion(const ExperimentConfig& cfg, const Tokenizer& tok) {
    const PoisonSpec spec = cfg.poison_spec(tok);
    std::string kind = cfg.asr.kind;
    if (kind == "auto") kind = spec.transform == OutputTransform::kFixedOutput ? "substring" : "label_match";
    if (kind == "substring") {
        if (spec.transform != OutputTransform::kFixedOutput)
            throw ConfigError("asr.kind substring needs a fixed_output transform");
        return AsrCriterion::substring(tok.decode(spec.fixed_output));
    }
    if (kind == "label_match") {
        if (cfg.task != TaskKind::kClassify) throw ConfigError("asr.kind label_match needs the classify task");
        const TaskGenerator gen(TaskKind::kClassify, tok);
        std::vector<std::string> labels;
        for (TokenId l : gen.labels()) labels.push_back(tok.token(l));
        return AsrCriterion::label_match(cfg.poison.to_label, labels);
    }
    const fs::path file = cfg.asr.keywords_file.empty() ? data_dir() / "refusal_keywords.txt" : fs::path(cfg.asr.keywords_file);
    return AsrCriterion::refusal_keywords(load_keywords(file));
}

GenerateOptions gen_options(const Tokenizer& tok) {
    GenerateOptions g;
    g.eos = tok.eos();
    return g;
}

// Split of the fully poisoned analysis set. Only samples whose target
// changed are used: the first slice gives the mean activations, the next the
// scoring pairs, the rest is the evaluation pool.
struct Analysis {
    std::vector<std::vector<TokenId>> mean_prompts;
    std::vector<ScoringPair> pairs;
    std::vector<std::vector<TokenId>> pool_triggered;
    std::vector<std::vector<TokenId>> pool_clean;
    // Every clean sample, for the clean-task metric.
    std::vector<std::vector<TokenId>> clean_prompts;
    std::vector<std::string> clean_refs;
};

Analysis split_analysis(const ExperimentConfig& cfg, const Tokenizer& tok, const DatasetPair& att) {
    Analysis a;
    const auto& ac = cfg.attribution;
    for (const auto& p : att.poisoned) {
        const Sample& clean = att.clean.at(p.source);
        if (p.output == clean.output) continue;
        if (a.mean_prompts.size() < ac.mean_sample_count) {
            a.mean_prompts.push_back(format_prompt(tok, p.input));
        } else if (a.pairs.size() < ac.acie_pair_count) {
            a.pairs.push_back({format_prompt(tok, clean.input), p.output});
        } else {
            a.pool_triggered.push_back(format_prompt(tok, p.input));
            a.pool_clean.push_back(format_prompt(tok, clean.input));
        }
    }
    if (a.pool_triggered.empty())
        throw ConfigError("data.analysis_samples leaves no evaluation samples after the mean and pair slices");
    const std::size_t n = std::min(ac.eval_count, att.clean.size());
    for (std::size_t i = 0; i < n; ++i) {
        a.clean_prompts.push_back(format_prompt(tok, att.clean[i].input));
        a.clean_refs.push_back(tok.decode(att.clean[i].output));
    }
    return a;
}

// Evaluation draw `index` from the pool: 0 is the leading slice, others are
// seeded resamples without replacement.
std::vector<std::size_t> eval_indices(const ExperimentConfig& cfg, const Analysis& a, std::size_t index) {
    std::vector<std::size_t> idx(a.pool_triggered.size());
    std::iota(idx.begin(), idx.end(), 0);
    if (index > 0) {
        std::mt19937_64 rng(derive_seed(cfg.seeds.ablation, index));
        std::shuffle(idx.begin(), idx.end(), rng);
    }
    idx.resize(std::min(idx.size(), cfg.attribution.eval_count));
    return idx;
}

std::vector<std::vector<TokenId>> pick(const std::vector<std::vector<TokenId>>& v, std::span<const std::size_t> idx) {
    std::vector<std::vector<TokenId>> out;
    out.reserve(idx.size());
    for (auto i : idx) out.push_back(v.at(i));
    return out;
}

struct InjectionEval {
    double triggered_asr = 0.0;
    double clean_asr = 0.0;
    double clean_metric = 0.0;  // exact-match accuracy on clean samples
};

InjectionEval evaluate_injection(const Transformer& m, const Tokenizer& tok, const ExperimentConfig& cfg,
                                 const Analysis& a, int threads) {
    const AsrCriterion crit = asr_criterion(cfg, tok);
    const auto idx = eval_indices(cfg, a, 0);
    const auto go = gen_options(tok);
    const std::size_t max_new = cfg.attribution.max_new;
    InjectionEval e;
    e.triggered_asr = eval_asr(generate_outputs(m, tok, pick(a.pool_triggered, idx), {}, max_new, go, threads), crit);
    e.clean_asr = eval_asr(generate_outputs(m, tok, pick(a.pool_clean, idx), {}, max_new, go, threads), crit);
    const auto outs = generate_outputs(m, tok, a.clean_prompts, {}, max_new, go, threads);
    std::size_t ok = 0;
    for (std::size_t i = 0; i < outs.size(); ++i) ok += outs[i] == a.clean_refs[i];
    e.clean_metric = outs.empty() ? 0.0 : static_cast<double>(ok) / static_cast<double>(outs.size());
    return e;
}

DatasetPair load_analysis(const Run& run, const Tokenizer& tok) { return read_dataset(run.need(kAnalysisData), tok); }

// ACIE matrix and mean activations as written by `attribute`.
AcieMatrix read_acie(const fs::path& p, const ModelConfig& mc) {
    const CsvTable t = read_csv(p);
    AcieMatrix m;
    m.n_layers = mc.n_layers;
    m.n_heads = mc.n_heads;
    m.scores.assign(mc.total_heads(), 0.0);
    std::vector<bool> seen(mc.total_heads(), false);
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const auto l = static_cast<std::size_t>(t.number(r, "layer")), h = static_cast<std::size_t>(t.number(r, "head"));
        if (l >= mc.n_layers || h >= mc.n_heads) throw CorruptionError(p.string() + ": head out of range");
        m.scores[l * mc.n_heads + h] = t.number(r, "acie");
        m.pair_count = static_cast<std::size_t>(t.number(r, "pairs"));
        seen[l * mc.n_heads + h] = true;
    }
    if (std::find(seen.begin(), seen.end(), false) != seen.end()) throw CorruptionError(p.string() + ": incomplete matrix");
    return m;
}

MeanHeadActivations read_means(const fs::path& p, const ModelConfig& mc) {
    const CsvTable t = read_csv(p);
    MeanHeadActivations mean;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const HeadId h{static_cast<int>(t.number(r, "layer")), static_cast<int>(t.number(r, "head"))};
        auto& v = mean.values[h];
        v.resize(mc.d_model);
        for (std::size_t d = 0; d < mc.d_model; ++d) v[d] = static_cast<float>(t.number(r, "d" + std::to_string(d)));
        mean.sample_count = static_cast<std::size_t>(t.number(r, "samples"));
    }
    if (mean.values.size() != mc.total_heads()) throw CorruptionError(p.string() + ": incomplete mean activations");
    return mean;
}

// Training examples of the foundation stage: clean task samples plus the
// configured response phrases after a bare BOS.
std::vector<TrainExample> foundation_examples(const ExperimentConfig& cfg, const Tokenizer& tok,
                                              const DatasetPair& data) {
    auto ex = training_examples(tok, data, false);
    for (std::size_t r = 0; r < cfg.foundation.phrase_repeats; ++r)
        for (const auto& phrase : cfg.foundation.phrases) {
            auto t = tok.encode(phrase);
            t.push_back(tok.eos());
            ex.push_back({{tok.bos()}, std::move(t)});
        }
    return ex;
}

void log_rows(CsvWriter& w, const std::string& stage, const TrainResult& r) {
    for (const auto& s : r.steps) w.row({stage, std::to_string(s.epoch), std::to_string(s.step), num(s.loss), num(s.lr)});
}

TrainResult fine_tune(Transformer& m, const ExperimentConfig& cfg, const Tokenizer& tok, const DatasetPair& data,
                      bool poisoned) {
    if (cfg.use_lora) attach_lora(m, cfg.lora, cfg.seeds.lora);
    const auto ex = training_examples(tok, data, poisoned);
    TrainResult r = train_sft(m, ex, cfg.train, cfg.use_lora);
    if (cfg.use_lora) lora_merge(m);
    return r;
}

}  // namespace

// ------------------------------------------------------------------ Summary

void Summary::add(const std::string& key, double value) { add(key, fixed(value)); }

std::string Summary::line() const {
    std::string s = "command=" + command;
    for (const auto& [k, v] : fields) s += " " + k + "=" + v;
    return s;
}

double Summary::number(const std::string& key) const {
    for (const auto& [k, v] : fields)
        if (k == key) return std::stod(v);
    throw ContractError("summary of " + command + " has no field " + key);
}

fs::path resolve_run_dir(const ExperimentConfig& config, const fs::path& explicit_dir) {
    if (!explicit_dir.empty()) return explicit_dir;
    const fs::path out = config.output_dir;
    if (out.is_absolute()) return out;
    if (const char* root = std::getenv("BKDATTR_OUTPUT_ROOT"); root && *root) return fs::path(root) / out;
    return out;
}

// --------------------------------------------------------------------- CSV

std::size_t CsvTable::column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
        if (header[i] == name) return i;
    throw CorruptionError("CSV has no column " + name);
}

double CsvTable::number(std::size_t row, const std::string& name) const {
    const std::string& s = text(row, name);
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw CorruptionError("CSV column " + name + ": not a number '" + s + "'");
    }
}

const std::string& CsvTable::text(std::size_t row, const std::string& name) const {
    const auto c = column(name);
    if (rows.at(row).size() <= c) throw CorruptionError("CSV row " + std::to_string(row) + " is short");
    return rows[row][c];
}

CsvTable read_csv(const fs::path& path) {
    std::istringstream in(read_file(path));
    std::string line;
    if (!std::getline(in, line) || line.rfind("# bkdattr-", 0) != 0 || line.substr(line.size() - 3) != " v1")
        throw CorruptionError(path.string() + ": missing or unsupported version line");
    auto split = [](const std::string& l) {
        std::vector<std::string> cells;
        std::string cell;
        std::istringstream ls(l);
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        if (!l.empty() && l.back() == ',') cells.emplace_back();
        return cells;
    };
    CsvTable t;
    if (!std::getline(in, line)) throw CorruptionError(path.string() + ": missing header");
    t.header = split(line);
    while (std::getline(in, line))
        if (!line.empty()) t.rows.push_back(split(line));
    return t;
}

// ----------------------------------------------------------------- commands

Summary cmd_gen_data(const CommandContext& ctx) {
    const auto& cfg = ctx.config;
    cfg.validate();
    fs::create_directories(ctx.run_dir);
    Run run(ctx, "gen-data");
    const Tokenizer tok = Tokenizer::synthetic();
    run.write(kConfigFile, config_to_json(cfg).dump(2) + "\n");
    run.write(kVocabFile, tok.serialize());

    const TaskGenerator gen(cfg.task, tok);
    PoisonSpec spec = cfg.poison_spec(tok);
    const DatasetPair train = build_datasets(gen, spec, cfg.data.n_samples, cfg.seeds.data);
    fs::create_directories(run.path("data"));
    write_dataset(run.path(kTrainData), train, tok);
    run.commit(kTrainData);

    spec.poison_rate = 1.0;
    const DatasetPair att = build_datasets(gen, spec, cfg.data.analysis_samples, cfg.seeds.analysis);
    write_dataset(run.path(kAnalysisData), att, tok);
    run.commit(kAnalysisData);

    Summary s{"gen-data", {}};
    s.add("clean", train.clean.size());
    s.add("poisoned", train.poisoned.size());
    s.add("analysis", att.poisoned.size());
    if (cfg.foundation.enabled) {
        const DatasetPair base = build_datasets(gen, spec, cfg.foundation.n_samples, cfg.seeds.foundation_data);
        write_dataset(run.path(kFoundationData), base, tok);
        run.commit(kFoundationData);
        s.add("foundation", base.clean.size());
    }
    s.add("run_dir", ctx.run_dir.string());
    return s;
}

Summary cmd_train(const CommandContext& ctx) {
    const auto& cfg = ctx.config;
    Run run(ctx, "train");
    const Tokenizer tok = run.tokenizer();
    const DatasetPair data = read_dataset(run.need(kTrainData), tok);
    const Analysis a = split_analysis(cfg, tok, load_analysis(run, tok));

    CsvWriter log("train-log", {"stage", "epoch", "step", "loss", "lr"});
    Transformer base(cfg.model, cfg.seeds.model);
    if (cfg.foundation.enabled) {
        const DatasetPair fdata = read_dataset(run.need(kFoundationData), tok);
        TrainConfig fc;
        fc.lr = cfg.foundation.lr;
        fc.epochs = cfg.foundation.epochs;
        fc.batch_size = cfg.foundation.batch_size;
        fc.seed = cfg.seeds.foundation;
        log_rows(log, "foundation", train_sft(base, foundation_examples(cfg, tok, fdata), fc));
    }
    run.save_model("foundation", base);

    Transformer backdoor = base.clone();
    log_rows(log, "backdoor", fine_tune(backdoor, cfg, tok, data, true));
    run.save_model("backdoor", backdoor);
    Transformer control = base.clone();
    log_rows(log, "control", fine_tune(control, cfg, tok, data, false));
    run.save_model("control", control);
    run.write("train_log.csv", log.str());

    const InjectionEval eb = evaluate_injection(backdoor, tok, cfg, a, ctx.threads);
    const InjectionEval ec = evaluate_injection(control, tok, cfg, a, ctx.threads);
    CsvWriter inj("injection", {"model", "triggered_asr", "clean_asr", "clean_metric"});
    inj.row({"backdoor", fixed(eb.triggered_asr), fixed(eb.clean_asr), fixed(eb.clean_metric)});
    inj.row({"control", fixed(ec.triggered_asr), fixed(ec.clean_asr), fixed(ec.clean_metric)});
    run.write("injection.csv", inj.str());

    Summary s{"train", {}};
    s.add("triggered_asr", eb.triggered_asr);
    s.add("clean_asr", eb.clean_asr);
    s.add("clean_metric", eb.clean_metric);
    s.add("control_clean_metric", ec.clean_metric);
    s.add("control_triggered_asr", ec.triggered_asr);
    s.add("clean_drop", ec.clean_metric - eb.clean_metric);
    return s;
}

Summary cmd_inject_edit(const CommandContext& ctx) {
    const auto& cfg = ctx.config;
    const auto& ec = cfg.edit;
    Run run(ctx, "inject-edit");
    const Tokenizer tok = run.tokenizer();
    const DatasetPair data = read_dataset(run.need(kTrainData), tok);
    const Analysis a = split_analysis(cfg, tok, load_analysis(run, tok));
    Transformer model = run.load_model("control");
    const ModelConfig& mc = cfg.model;
    const int layer = ec.layer;

    // Clean samples and triggered twins of the training data. Keys at every
    // position are retained except the last prompt token of triggered
    // prompts, the only place the edit should act.
    const PoisonSpec spec = cfg.poison_spec(tok);
    std::vector<std::vector<TokenId>> retained;  // prefixes whose last key is kept
    std::vector<TrainExample> poisoned;
    std::mt19937_64 rng(derive_seed(cfg.seeds.data, 0xed17));
    std::size_t n_clean = 0;
    auto add_prefixes = [&](const std::vector<TokenId>& seq, std::size_t skip) {
        for (std::size_t len = 1; len <= seq.size(); ++len)
            if (len != skip) retained.emplace_back(seq.begin(), seq.begin() + static_cast<std::ptrdiff_t>(len));
    };
    for (const Sample& s : data.clean) {
        if (n_clean < ec.n_clean) {
            auto seq = format_prompt(tok, s.input);
            seq.insert(seq.end(), s.output.begin(), s.output.end());
            add_prefixes(seq, 0);
            ++n_clean;
        }
        if (poisoned.size() >= ec.n_poisoned) continue;
        const auto target = poison_output(s.output, spec);
        if (target == s.output) continue;
        TrainExample e{format_prompt(tok, insert_trigger(s.input, spec, rng)), format_target(tok, target)};
        auto seq = e.prompt;
        seq.insert(seq.end(), e.target.begin(), e.target.end() - 1);
        add_prefixes(seq, e.prompt.size());
        poisoned.push_back(std::move(e));
    }
    if (poisoned.empty()) throw ConfigError("inject-edit: no training sample changes under the poison transform");

    // Last-token MLP keys as columns.
    auto keys = [&](const std::vector<std::vector<TokenId>>& prompts) {
        Matrix k(mc.d_ff, prompts.size());
        std::vector<std::vector<float>> cols(prompts.size());
        parallel_for(prompts.size(), ctx.threads, [&](std::size_t i) {
            const std::vector<HookSpec> hooks{HookSpec::capture_mlp_key(layer)};
            cols[i] = model.forward(prompts[i], hooks).record.mlp_keys.at(layer);
        });
        for (std::size_t i = 0; i < cols.size(); ++i)
            for (std::size_t r = 0; r < mc.d_ff; ++r) k(r, i) = cols[i][r];
        return k;
    };
    std::vector<std::vector<TokenId>> poisoned_prompts;
    for (const auto& e : poisoned) poisoned_prompts.push_back(e.prompt);
    const Matrix K_c = keys(retained), K_p = keys(poisoned_prompts);

    // Residual shift at the last prompt token that makes the backdoor target
    // likely; it becomes the required change of the MLP output there.
    Tensor delta = Tensor::zeros({mc.d_model}, true);
    AdamOptions ao;
    ao.lr = static_cast<float>(ec.lr);
    Adam opt({delta}, ao);
    const std::size_t batch = 16;
    double last_loss = 0.0;
    for (std::size_t step = 0; step < ec.steps; ++step) {
        opt.zero_grad();
        std::vector<Tensor> terms;
        std::size_t tokens = 0;
        for (std::size_t b = 0; b < batch; ++b) {
            const TrainExample& e = poisoned[(step * batch + b) % poisoned.size()];
            std::vector<TokenId> seq = e.prompt;
            seq.insert(seq.end(), e.target.begin(), e.target.end() - 1);
            const int pos = static_cast<int>(e.prompt.size()) - 1;
            const std::vector<HookSpec> hooks{HookSpec::add_to_hidden(layer, 1.0f, delta, pos)};
            const Tensor logits = model.forward(seq, hooks).logits;
            terms.push_back(ops::cross_entropy_sum(ops::slice_rows(logits, e.prompt.size() - 1, e.target.size()), e.target));
            tokens += e.target.size();
        }
        Tensor loss = ops::scale(ops::add_n(terms), 1.0f / static_cast<float>(tokens));
        last_loss = loss.item();
        if (!std::isfinite(last_loss)) throw NumericalError("inject-edit: non-finite loss while fitting the target shift");
        loss.backward();
        opt.step();
    }

    // Column-key convention: W = w_down^T [d_model x d_ff].
    Tensor& w_down = model.layer(static_cast<std::size_t>(layer)).w_down;
    Matrix W(mc.d_model, mc.d_ff);
    for (std::size_t r = 0; r < mc.d_ff; ++r)
        for (std::size_t c = 0; c < mc.d_model; ++c) W(c, r) = w_down.at(r, c);
    auto apply = [&](const Matrix& K) {
        Matrix V(mc.d_model, K.cols);
        for (std::size_t i = 0; i < mc.d_model; ++i)
            for (std::size_t j = 0; j < K.cols; ++j) {
                double acc = 0.0;
                for (std::size_t t = 0; t < mc.d_ff; ++t) acc += W(i, t) * K(t, j);
                V(i, j) = acc;
            }
        return V;
    };
    const Matrix V_c = apply(K_c);
    Matrix V_p = apply(K_p);
    const auto d = delta.data();
    for (std::size_t i = 0; i < mc.d_model; ++i)
        for (std::size_t j = 0; j < V_p.cols; ++j) V_p(i, j) += d[i];
    const Matrix D = edit_inject(W, K_c, V_c, K_p, V_p, {ec.regularize, ec.epsilon});
    auto wd = w_down.mutable_data();
    double fro = 0.0;
    for (std::size_t r = 0; r < mc.d_ff; ++r)
        for (std::size_t c = 0; c < mc.d_model; ++c) {
            wd[r * mc.d_model + c] += static_cast<float>(D(c, r));
            fro += D(c, r) * D(c, r);
        }
    run.save_model("edited", model);

    const InjectionEval e = evaluate_injection(model, tok, cfg, a, ctx.threads);
    CsvWriter w("edit", {"layer", "n_clean", "n_poisoned", "shift_loss", "delta_norm", "edit_norm", "triggered_asr",
                         "clean_asr", "clean_metric"});
    double dn = 0.0;
    for (float v : d) dn += static_cast<double>(v) * v;
    w.row({std::to_string(layer), std::to_string(K_c.cols), std::to_string(K_p.cols), fixed(last_loss),
           fixed(std::sqrt(dn)), fixed(std::sqrt(fro)), fixed(e.triggered_asr), fixed(e.clean_asr),
           fixed(e.clean_metric)});
    run.write("edit/edit.csv", w.str());

    Summary s{"inject-edit", {}};
    s.add("layer", layer);
    s.add("triggered_asr", e.triggered_asr);
    s.add("clean_asr", e.clean_asr);
    s.add("clean_metric", e.clean_metric);
    s.add("edit_norm", std::sqrt(fro));
    return s;
}

Summary cmd_probe(const CommandContext& ctx) {
    const auto& cfg = ctx.config;
    Run run(ctx, "probe");
    const Tokenizer tok = run.tokenizer();
    const DatasetPair att = load_analysis(run, tok);
    const Transformer model = run.load_model(ctx.model);

    const std::size_t n = cfg.probe.samples_per_class;
    std::vector<std::vector<TokenId>> clean, poisoned;
    for (const auto& s : att.clean) {
        if (clean.size() >= n) break;
        clean.push_back(format_prompt(tok, s.input));
    }
    for (const auto& p : att.poisoned) {
        if (poisoned.size() >= n) break;
        poisoned.push_back(format_prompt(tok, p.input));
    }
    std::vector<int> layers(cfg.model.n_layers);
    std::iota(layers.begin(), layers.end(), 0);
    const auto hidden = harvest_hidden(model, clean, poisoned, layers, cfg.seeds.probe, ctx.threads);

    Summary s{"probe", {}};
    for (ProbeKind kind : {ProbeKind::kMlp, ProbeKind::kSvm}) {
        ProbeOptions o = cfg.probe.options;
        o.seed = cfg.seeds.probe;
        const IlcaMatrix m = ilca_matrix(hidden, kind, o, ctx.threads);
        const std::string name = to_string(kind);
        CsvWriter w("ilca", {"probe", "train_layer", "eval_layer", "accuracy"});
        Heatmap h{"Inter-layer probe accuracy (" + name + ")", "probe trained on layer", "evaluated on layer", {}, {}, m.values};
        for (int l : m.layers) {
            h.row_names.push_back("L" + std::to_string(l));
            h.col_names.push_back("L" + std::to_string(l));
        }
        double min_diag = 1.0;
        for (std::size_t i = 0; i < m.layers.size(); ++i) {
            for (std::size_t k = 0; k < m.layers.size(); ++k)
                w.row({name, std::to_string(m.layers[i]), std::to_string(m.layers[k]), fixed(m.values[i][k])});
            if (m.layers[i] >= 1) min_diag = std::min(min_diag, m.values[i][i]);
        }
        run.write(art(ctx, "probe/ilca_" + name + ".csv"), w.str());
        run.write(art(ctx, "probe/ilca_" + name + ".svg"), render_heatmap(h));
        s.add(name + "_min_diag", min_diag);
        s.add(name + "_diag_mean", m.diagonal_mean());
        s.add(name + "_offdiag_mean", m.off_diagonal_mean());
    }
    return s;
}

Summary cmd_attribute(const CommandContext& ctx) {
    const auto& cfg = ctx.config;
    Run run(ctx, "attribute");
    const Tokenizer tok = run.tokenizer();
    const Analysis a = split_analysis(cfg, tok, load_analysis(run, tok));
    const Transformer model = run.load_model(ctx.model);
    const ModelConfig& mc = cfg.model;

    const MeanHeadActivations mean = average_activations(model, a.mean_prompts, ctx.threads);
    const AcieMatrix mat = acie_matrix(model, a.pairs, mean, ctx.threads);

    std::vector<std::string> cols{"layer", "head", "samples"};
    for (std::size_t d = 0; d < mc.d_model; ++d) cols.push_back("d" + std::to_string(d));
    CsvWriter wm("mean-activations", cols);
    for (const auto& [h, v] : mean.values) {
        std::vector<std::string> row{std::to_string(h.layer), std::to_string(h.head), std::to_string(mean.sample_count)};
        for (float x : v) row.push_back(numf(x));
        wm.row(row);
    }
    run.write(art(ctx, "attribution/mean_activations.csv"), wm.str());

    const auto ranked = top_k_heads(mat, mc.total_heads());
    std::map<HeadId, std::size_t> rank;
    for (std::size_t i = 0; i < ranked.size(); ++i) rank[ranked[i]] = i + 1;
    CsvWriter wa("acie", {"layer", "head", "acie", "rank", "pairs"});
    Heatmap h{"Averaged causal effect per head", "layer", "head", {}, {}, {}};
    for (std::size_t l = 0; l < mc.n_layers; ++l) {
        h.row_names.push_back("L" + std::to_string(l));
        h.values.emplace_back();
        for (std::size_t j = 0; j < mc.n_heads; ++j) {
            const HeadId id{static_cast<int>(l), static_cast<int>(j)};
            wa.row({std::to_string(l), std::to_string(j), num(mat.at(l, j)), std::to_string(rank[id]),
                    std::to_string(mat.pair_count)});
            h.values.back().push_back(mat.at(l, j));
        }
    }
    for (std::size_t j = 0; j < mc.n_heads; ++j) h.col_names.push_back("H" + std::to_string(j));
    run.write(art(ctx, "attribution/acie.csv"), wa.str());
    run.write(art(ctx, "attribution/acie.svg"), render_heatmap(h));

    const std::size_t k = cfg.ablation_k();
    Summary s{"attribute", {}};
    s.add("pairs", mat.pair_count);
    s.add("mean_samples", mean.sample_count);
    s.add("max_acie", mat.at(ranked.front()));
    s.add("top_heads", join_heads(std::span(ranked).first(k)));
    return s;
}

Summary cmd_ablate(const CommandContext& ctx) {
    const auto& cfg = ctx.config;
    const auto& ac = cfg.attribution;
    Run run(ctx, "ablate");
    const Tokenizer tok = run.tokenizer();
    const Analysis a = split_analysis(cfg, tok, load_analysis(run, tok));
    const Transformer model = run.load_model(ctx.model);
    const AcieMatrix mat = read_acie(run.need(art(ctx, "attribution/acie.csv")), cfg.model);
    const AsrCriterion crit = asr_criterion(cfg, tok);

    EvalOptions eo;
    eo.max_new = ac.max_new;
    eo.threads = ctx.threads;
    eo.scope = ac.scope == "all" ? AblationScope::kAllPositions : AblationScope::kOutputPositions;
    const std::size_t q = cfg.ablation_k(), total = cfg.model.total_heads();
    const auto ranked = top_k_heads(mat, total);

    CsvWriter w("ablation", {"selection", "n_ablated", "draw", "heads", "asr"});
    // Top-n heads for n in {0, q, 2q}, each on every evaluation draw.
    std::vector<double> mean_asr;
    for (std::size_t n : {std::size_t{0}, q, std::min(2 * q, total)}) {
        const std::span<const HeadId> heads(ranked.data(), n);
        double sum = 0.0;
        for (std::size_t d = 0; d < ac.ablation_seeds; ++d) {
            const auto prompts = pick(a.pool_triggered, eval_indices(cfg, a, d));
            const double asr = ablate_and_eval(model, tok, heads, prompts, crit, eo);
            sum += asr;
            w.row({"top", std::to_string(n), std::to_string(d), join_heads(heads), fixed(asr)});
        }
        mean_asr.push_back(sum / static_cast<double>(ac.ablation_seeds));
    }
    // Random q-head groups on the leading draw.
    const auto prompts = pick(a.pool_triggered, eval_indices(cfg, a, 0));
    std::vector<HeadId> all(ranked);
    std::sort(all.begin(), all.end());
    double rand_sum = 0.0;
    for (std::size_t g = 0; g < ac.random_groups; ++g) {
        std::mt19937_64 rng(derive_seed(cfg.seeds.ablation, 0x5eed0000 + g));
        std::vector<HeadId> heads = all;
        std::shuffle(heads.begin(), heads.end(), rng);
        heads.resize(q);
        std::sort(heads.begin(), heads.end());
        const double asr = ablate_and_eval(model, tok, heads, prompts, crit, eo);
        rand_sum += asr;
        w.row({"random", std::to_string(q), std::to_string(g), join_heads(heads), fixed(asr)});
    }
    run.write(art(ctx, "ablation/ablation.csv"), w.str());

    // Relative reductions use the unablated ASR on the same leading draw.
    const double base = ablate_and_eval(model, tok, {}, prompts, crit, eo);
    const double top = ablate_and_eval(model, tok, std::span<const HeadId>(ranked.data(), q), prompts, crit, eo);
    const double rnd = rand_sum / static_cast<double>(ac.random_groups);
    auto rel = [&](double v) { return base > 0.0 ? (base - v) / base : 0.0; };
    Summary s{"ablate", {}};
    s.add("n_ablated", q);
    s.add("baseline_asr", base);
    s.add("top_asr", top);
    s.add("top_reduction", rel(top));
    s.add("random_asr", rnd);
    s.add("random_reduction", rel(rnd));
    s.add("mean_asr_0", mean_asr[0]);
    s.add("mean_asr_q", mean_asr[1]);
    s.add("mean_asr_2q", mean_asr[2]);
    return s;
}

Summary cmd_vector(const CommandContext& ctx) {
    const auto& cfg = ctx.config;
    Run run(ctx, "vector");
    const AcieMatrix mat = read_acie(run.need(art(ctx, "attribution/acie.csv")), cfg.model);
    const MeanHeadActivations mean = read_means(run.need(art(ctx, "attribution/mean_activations.csv")), cfg.model);
    const BackdoorVector vec = extract_vector(mean, mat, cfg.vector_k());

    CsvWriter wh("vector-heads", {"rank", "layer", "head", "acie", "provenance"});
    for (std::size_t i = 0; i < vec.source_heads.size(); ++i) {
        const HeadId h = vec.source_heads[i];
        wh.row({std::to_string(i + 1), std::to_string(h.layer), std::to_string(h.head), num(mat.at(h)), vec.provenance});
    }
    run.write(art(ctx, "vector/heads.csv"), wh.str());
    CsvWriter wv("vector", {"dim", "value"});
    double norm = 0.0;
    for (std::size_t d = 0; d < vec.v.size(); ++d) {
        wv.row({std::to_string(d), numf(vec.v[d])});
        norm += static_cast<double>(vec.v[d]) * vec.v[d];
    }
    run.write(art(ctx, "vector/vector.csv"), wv.str());

    Summary s{"vector", {}};
    s.add("k", vec.k);
    s.add("heads", join_heads(vec.source_heads));
    s.add("norm", std::sqrt(norm));
    s.add("provenance", vec.provenance.substr(0, 16));
    return s;
}

Summary cmd_sweep(const CommandContext& ctx) {
    const auto& cfg = ctx.config;
    Run run(ctx, "sweep");
    const Tokenizer tok = run.tokenizer();
    const Analysis a = split_analysis(cfg, tok, load_analysis(run, tok));
    const Transformer model = run.load_model(ctx.model);
    const ModelConfig& mc = cfg.model;
    const AcieMatrix mat = read_acie(run.need(art(ctx, "attribution/acie.csv")), mc);
    const MeanHeadActivations mean = read_means(run.need(art(ctx, "attribution/mean_activations.csv")), mc);
    const CsvTable vt = read_csv(run.need(art(ctx, "vector/vector.csv")));
    const CsvTable ht = read_csv(run.need(art(ctx, "vector/heads.csv")));
    BackdoorVector vec;
    for (std::size_t r = 0; r < vt.rows.size(); ++r) vec.v.push_back(static_cast<float>(vt.number(r, "value")));
    for (std::size_t r = 0; r < ht.rows.size(); ++r)
        vec.source_heads.push_back({static_cast<int>(ht.number(r, "layer")), static_cast<int>(ht.number(r, "head"))});
    vec.k = vec.source_heads.size();
    if (vec.v.size() != mc.d_model || vec.k == 0) throw CorruptionError("vector artifacts do not match the model");
    if (ht.text(0, "provenance") != acie_fingerprint(mat))
        throw CorruptionError("vector/heads.csv was extracted from a different attribution matrix");

    const AsrCriterion crit = asr_criterion(cfg, tok);
    const auto idx = eval_indices(cfg, a, 0);
    const auto clean = pick(a.pool_clean, idx), triggered = pick(a.pool_triggered, idx);
    InterventionOptions io;
    io.max_new = cfg.attribution.max_new;
    io.threads = ctx.threads;
    io.every_step = cfg.vector.every_step;
    io.scale = cfg.vector.scale;

    struct Arm {
        int sign;
        const std::vector<std::vector<TokenId>>* prompts;
        SweepResult genuine;
        RandomBaseline random;
    };
    std::vector<Arm> arms{{+1, &clean, {}, {}}, {-1, &triggered, {}, {}}};
    CsvWriter w("sweep", {"group_id", "sign", "condition", "layer", "asr", "baseline_asr"});
    auto rows = [&](const std::string& group, const SweepResult& r) {
        for (const auto& x : r.layers)
            w.row({group, std::to_string(x.sign), to_string(x.condition), std::to_string(x.layer), fixed(x.asr),
                   fixed(x.baseline_asr)});
    };
    for (auto& arm : arms) {
        arm.genuine = layer_sweep(model, tok, vec, arm.sign, *arm.prompts, crit, io);
        arm.random = random_baseline(model, tok, mean, vec.k, vec.source_heads, cfg.vector.random_groups,
                                     derive_seed(cfg.seeds.vector, arm.sign > 0 ? 1 : 2), arm.sign, *arm.prompts, crit,
                                     io);
        rows("genuine", arm.genuine);
        for (std::size_t g = 0; g < arm.random.sweeps.size(); ++g) rows("random" + std::to_string(g), arm.random.sweeps[g]);
    }
    run.write(art(ctx, "vector/sweep.csv"), w.str());

    // A zero vector must leave every generated token unchanged.
    const BackdoorVector zero{std::vector<float>(mc.d_model, 0.0f), vec.source_heads, vec.k, {}};
    std::size_t changed = 0, checked = 0;
    const auto go = gen_options(tok);
    for (const auto* prompts : {&clean, &triggered}) {
        for (int l = 0; l < static_cast<int>(mc.n_layers); ++l) {
            const std::vector<HookSpec> hooks{HookSpec::add_to_hidden(l, 1.0f, zero.v)};
            std::vector<int> diff(prompts->size(), 0);
            parallel_for(prompts->size(), ctx.threads, [&](std::size_t i) {
                diff[i] = model.generate((*prompts)[i], io.max_new, hooks, go) !=
                          model.generate((*prompts)[i], io.max_new, {}, go);
            });
            changed += static_cast<std::size_t>(std::count(diff.begin(), diff.end(), 1));
            checked += prompts->size();
        }
    }
    CsvWriter wz("zero-vector", {"checked", "changed"});
    wz.row({std::to_string(checked), std::to_string(changed)});
    run.write(art(ctx, "vector/zero_vector.csv"), wz.str());

    LinePlot plot{"Backdoor vector layer sweep", "layer of intervention", "ASR", {}, 0.0, 1.0, {}};
    for (std::size_t l = 0; l < mc.n_layers; ++l) plot.x_names.push_back("L" + std::to_string(l));
    for (const auto& arm : arms) {
        const std::string name = arm.sign > 0 ? "add on clean" : "subtract on triggered";
        LineSeries g{name, {}, false}, r{name + " (random heads)", std::vector<double>(mc.n_layers, 0.0), true};
        for (const auto& x : arm.genuine.layers) g.y.push_back(x.asr);
        for (const auto& sw : arm.random.sweeps)
            for (std::size_t l = 0; l < mc.n_layers; ++l)
                r.y[l] += sw.layers[l].asr / static_cast<double>(arm.random.sweeps.size());
        plot.series.push_back(std::move(g));
        plot.series.push_back(std::move(r));
    }
    run.write(art(ctx, "vector/sweep.svg"), render_line_plot(plot));

    Summary s{"sweep", {}};
    const auto& aa = arms[0].genuine.best();
    const auto& ss = arms[1].genuine.best();
    s.add("aa_layer", aa.layer);
    s.add("aa_baseline", aa.baseline_asr);
    s.add("aa_asr", aa.asr);
    s.add("ss_layer", ss.layer);
    s.add("ss_baseline", ss.baseline_asr);
    s.add("ss_asr", ss.asr);
    s.add("aa_random_effect", arms[0].random.mean_effect);
    s.add("ss_random_effect", arms[1].random.mean_effect);
    s.add("zero_vector_changed", changed);
    return s;
}

// ------------------------------------------------------------------- gates

std::vector<Gate> evaluate_gates(const fs::path& run_dir, const std::string& model) {
    auto p = [&](const std::string& rel) { return run_dir / (model == "backdoor" ? rel : model + "/" + rel); };
    std::vector<Gate> gates;

    {
        Gate g{"injection", false, false, ""};
        const fs::path f = run_dir / "injection.csv";
        if (fs::exists(f)) {
            const CsvTable t = read_csv(f);
            double asr = 0, clean = 0, control = 0;
            for (std::size_t r = 0; r < t.rows.size(); ++r) {
                if (t.text(r, "model") == "backdoor") {
                    asr = t.number(r, "triggered_asr");
                    clean = t.number(r, "clean_metric");
                } else if (t.text(r, "model") == "control") {
                    control = t.number(r, "clean_metric");
                }
            }
            g.available = true;
            g.pass = asr >= 0.95 && control - clean <= 0.05;
            g.detail = fmt::format("triggered ASR {:.3f} (need >= 0.95), clean metric {:.3f} vs control {:.3f} "
                                   "(drop <= 0.05)",
                                   asr, clean, control);
        }
        gates.push_back(g);
    }
    {
        Gate g{"probe", false, true, ""};
        for (const char* kind : {"mlp", "svm"}) {
            const fs::path f = p(std::string("probe/ilca_") + kind + ".csv");
            if (!fs::exists(f)) {
                g.pass = false;
                continue;
            }
            g.available = true;
            const CsvTable t = read_csv(f);
            double min_diag = 1.0, diag = 0, off = 0;
            std::size_t nd = 0, no = 0;
            for (std::size_t r = 0; r < t.rows.size(); ++r) {
                const int i = static_cast<int>(t.number(r, "train_layer")), k = static_cast<int>(t.number(r, "eval_layer"));
                const double v = t.number(r, "accuracy");
                if (i == k) {
                    diag += v;
                    ++nd;
                    if (i >= 1) min_diag = std::min(min_diag, v);
                } else {
                    off += v;
                    ++no;
                }
            }
            diag /= std::max<std::size_t>(nd, 1);
            off /= std::max<std::size_t>(no, 1);
            g.pass = g.pass && min_diag >= 0.90 && diag > off;
            g.detail += fmt::format("{}{}: min diagonal (layers >= 1) {:.3f} (need >= 0.90), diagonal mean {:.3f} vs "
                                    "off-diagonal {:.3f}",
                                    g.detail.empty() ? "" : "; ", kind, min_diag, diag, off);
        }
        if (!g.available) g.pass = false;
        gates.push_back(g);
    }
    {
        Gate g{"ablation", false, false, ""};
        const fs::path f = p("ablation/ablation.csv");
        if (fs::exists(f)) {
            const CsvTable t = read_csv(f);
            std::map<std::size_t, std::pair<double, std::size_t>> top;
            std::map<std::size_t, double> top_draw0;
            double rnd = 0;
            std::size_t nr = 0, q = 0;
            for (std::size_t r = 0; r < t.rows.size(); ++r) {
                const auto n = static_cast<std::size_t>(t.number(r, "n_ablated"));
                const double asr = t.number(r, "asr");
                if (t.text(r, "selection") == "top") {
                    top[n].first += asr;
                    ++top[n].second;
                    if (t.number(r, "draw") == 0) top_draw0[n] = asr;
                } else {
                    rnd += asr;
                    ++nr;
                    q = n;
                }
            }
            g.available = true;
            if (top.size() >= 2 && nr > 0 && top.count(0) && top_draw0.count(q)) {
                const double base = top_draw0[0];
                rnd /= static_cast<double>(nr);
                const double top_red = base > 0 ? (base - top_draw0[q]) / base : 0.0;
                const double rnd_red = base > 0 ? (base - rnd) / base : 0.0;
                bool mono = true;
                double prev = 2.0;
                std::string means;
                for (const auto& [n, sc] : top) {
                    const double m = sc.first / static_cast<double>(sc.second);
                    mono = mono && m <= prev;
                    prev = m;
                    means += fmt::format("{}{}:{:.3f}", means.empty() ? "" : " ", n, m);
                }
                g.pass = base > 0 && top_red >= 0.5 && rnd_red < 0.25 && mono;
                g.detail = fmt::format("top-{} reduction {:.3f} (need >= 0.5), random reduction {:.3f} (need < 0.25), "
                                       "mean ASR by n [{}] {}",
                                       q, top_red, rnd_red, means, mono ? "non-increasing" : "NOT monotone");
            } else {
                g.detail = "incomplete ablation table";
            }
        }
        gates.push_back(g);
    }
    {
        Gate g{"vector", false, false, ""};
        const fs::path f = p("vector/sweep.csv"), z = p("vector/zero_vector.csv");
        if (fs::exists(f) && fs::exists(z)) {
            const CsvTable t = read_csv(f);
            // Best layer per (group, sign): max ASR when adding, min when subtracting.
            std::map<std::pair<std::string, int>, std::pair<double, double>> best;  // -> (asr, baseline)
            for (std::size_t r = 0; r < t.rows.size(); ++r) {
                const auto key = std::make_pair(t.text(r, "group_id"), static_cast<int>(t.number(r, "sign")));
                const double asr = t.number(r, "asr"), base = t.number(r, "baseline_asr");
                auto it = best.find(key);
                if (it == best.end() || (key.second > 0 ? asr > it->second.first : asr < it->second.first))
                    best[key] = {asr, base};
            }
            const auto aa = best.at({"genuine", 1}), ss = best.at({"genuine", -1});
            double genuine = (std::abs(aa.first - aa.second) + std::abs(ss.first - ss.second)) / 2.0, rnd = 0;
            std::size_t nr = 0;
            for (const auto& [key, v] : best)
                if (key.first != "genuine") {
                    rnd += std::abs(v.first - v.second);
                    ++nr;
                }
            rnd /= static_cast<double>(std::max<std::size_t>(nr, 1));
            const double ss_red = ss.second > 0 ? (ss.second - ss.first) / ss.second : 0.0;
            const CsvTable zt = read_csv(z);
            const double changed = zt.number(0, "changed");
            g.available = true;
            const bool aa_ok = aa.second <= 0.05 && aa.first >= 0.5, ss_ok = ss_red >= 0.5;
            g.pass = aa_ok && ss_ok && rnd < 0.5 * genuine && changed == 0;
            g.detail = fmt::format("add: clean ASR {:.3f} -> {:.3f} (need <= 0.05 -> >= 0.5); subtract: triggered "
                                   "ASR {:.3f} -> {:.3f}, reduction {:.3f} (need >= 0.5); random mean |dASR| {:.3f} vs "
                                   "genuine {:.3f} (need < half); zero vector changed {} outputs",
                                   aa.second, aa.first, ss.second, ss.first, ss_red, rnd, genuine, changed);
        }
        gates.push_back(g);
    }
    return gates;
}

Summary cmd_report(const CommandContext& ctx) {
    if (!fs::exists(ctx.run_dir / "manifest.json"))
        throw MissingPrerequisite("no artifacts in " + ctx.run_dir.string() + " (manifest.json missing)");
    RunManifest manifest = RunManifest::load_or_create(ctx.run_dir);
    manifest.verify();
    Run run(ctx, "report");
    auto present = [&](const std::string& rel) { return manifest.has(art(ctx, rel)); };

    std::string md = "# Backdoor attribution report\n\n";
    md += "Run directory: `" + ctx.run_dir.string() + "`, model: " + ctx.model + "\n\n";
    std::size_t sections = 0;
    if (manifest.has("injection.csv")) {
        ++sections;
        md += "## Injection\n\n| model | triggered ASR | clean ASR | clean metric |\n|---|---|---|---|\n";
        const CsvTable t = read_csv(run.path("injection.csv"));
        for (std::size_t r = 0; r < t.rows.size(); ++r)
            md += fmt::format("| {} | {} | {} | {} |\n", t.text(r, "model"), t.text(r, "triggered_asr"),
                              t.text(r, "clean_asr"), t.text(r, "clean_metric"));
        if (manifest.has("edit/edit.csv")) {
            const CsvTable e = read_csv(run.path("edit/edit.csv"));
            md += fmt::format("| edited (layer {}) | {} | {} | {} |\n", e.text(0, "layer"), e.text(0, "triggered_asr"),
                              e.text(0, "clean_asr"), e.text(0, "clean_metric"));
        }
        md += "\n";
    }
    if (present("probe/ilca_mlp.csv") || present("probe/ilca_svm.csv")) {
        ++sections;
        md += "## Inter-layer probe accuracy\n\n";
        for (const char* kind : {"mlp", "svm"}) {
            const std::string rel = art(ctx, std::string("probe/ilca_") + kind);
            if (!manifest.has(rel + ".csv")) continue;
            md += fmt::format("![{} probes]({}.svg)\n\n", kind, rel);
        }
    }
    if (present("attribution/acie.csv")) {
        ++sections;
        const std::string rel = art(ctx, "attribution/acie");
        md += "## Head attribution\n\n![ACIE heatmap](" + rel + ".svg)\n\n| rank | head | ACIE |\n|---|---|---|\n";
        const CsvTable t = read_csv(run.path(rel + ".csv"));
        std::vector<std::pair<int, std::string>> rows;
        for (std::size_t r = 0; r < t.rows.size(); ++r)
            rows.emplace_back(static_cast<int>(t.number(r, "rank")),
                              fmt::format("| {} | L{}H{} | {:.4f} |\n", t.text(r, "rank"), t.text(r, "layer"),
                                          t.text(r, "head"), t.number(r, "acie")));
        std::sort(rows.begin(), rows.end());
        for (std::size_t i = 0; i < std::min<std::size_t>(rows.size(), 8); ++i) md += rows[i].second;
        md += "\n";
    }
    if (present("ablation/ablation.csv")) {
        ++sections;
        md += "## Head ablation\n\nFull table: `" + art(ctx, "ablation/ablation.csv") +
              "`\n\n| selection | heads ablated | mean ASR | draws |\n|---|---|---|---|\n";
        const CsvTable t = read_csv(run.path(art(ctx, "ablation/ablation.csv")));
        std::map<std::pair<std::string, std::size_t>, std::pair<double, std::size_t>> agg;
        for (std::size_t r = 0; r < t.rows.size(); ++r) {
            auto& v = agg[{t.text(r, "selection"), static_cast<std::size_t>(t.number(r, "n_ablated"))}];
            v.first += t.number(r, "asr");
            ++v.second;
        }
        for (const auto& [key, v] : agg)
            md += fmt::format("| {} | {} | {:.3f} | {} |\n", key.first, key.second, v.first / static_cast<double>(v.second),
                              v.second);
        md += "\n";
    }
    if (present("vector/sweep.csv")) {
        ++sections;
        md += "## Backdoor vector\n\n![layer sweep](" + art(ctx, "vector/sweep.svg") + ")\n\n";
    }
    if (sections == 0) throw MissingPrerequisite("no reportable artifacts in " + ctx.run_dir.string());

    const auto gates = evaluate_gates(ctx.run_dir, ctx.model);
    md += "## Gates\n\n";
    std::string gate_line;
    std::size_t passed = 0, available = 0;
    for (const auto& g : gates) {
        const std::string verdict = !g.available ? "SKIP" : g.pass ? "PASS" : "FAIL";
        md += fmt::format("- {} {}{}{}\n", verdict, g.name, g.detail.empty() ? "" : ": ", g.detail);
        gate_line += (gate_line.empty() ? "" : ",") + g.name + ":" + verdict;
        available += g.available;
        passed += g.available && g.pass;
    }
    run.write(art(ctx, "report.md"), md);

    Summary s{"report", {}};
    s.add("sections", sections);
    s.add("gates_passed", passed);
    s.add("gates_available", available);
    s.add("gates", gate_line);
    return s;
}

std::vector<Summary> cmd_run(const CommandContext& ctx) {
    std::vector<Summary> out;
    out.push_back(cmd_gen_data(ctx));
    out.push_back(cmd_train(ctx));
    out.push_back(cmd_inject_edit(ctx));
    out.push_back(cmd_probe(ctx));
    out.push_back(cmd_attribute(ctx));
    out.push_back(cmd_ablate(ctx));
    out.push_back(cmd_vector(ctx));
    out.push_back(cmd_sweep(ctx));
    out.push_back(cmd_report(ctx));
    return out;
}

}  // namespace bkd
