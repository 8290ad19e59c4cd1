// Acceptance suite: one PASS/FAIL line per criterion. Criteria 4-8 and 11
// train the default toy models end to end, so a full run takes several
// minutes. Usage: acceptance [--work-dir DIR] [--only 1,2,...]

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "bkdattr/core/ops.hpp"
#include "bkdattr/core/util.hpp"
#include "bkdattr/inject/edit.hpp"
#include "bkdattr/inject/lora.hpp"
#include "bkdattr/pipeline/commands.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace bkd;
using namespace bkd::testing;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

using Clock = std::chrono::steady_clock;
double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

void progress(const std::string& msg) { std::cerr << "[acceptance] " << msg << std::endl; }

std::vector<TokenId> random_tokens(std::size_t n, std::size_t vocab, std::mt19937_64& rng) {
    std::uniform_int_distribution<int> d(0, static_cast<int>(vocab) - 1);
    std::vector<TokenId> t(n);
    for (auto& x : t) x = d(rng);
    return t;
}

// Random architecture within the toy envelope; heads divide into kv groups.
ModelConfig random_config(std::mt19937_64& rng) {
    auto pick = [&](std::initializer_list<std::size_t> v) {
        return *(v.begin() + std::uniform_int_distribution<std::size_t>(0, v.size() - 1)(rng));
    };
    ModelConfig c;
    c.n_layers = pick({1, 2, 3});
    c.n_heads = pick({1, 2, 4, 8});
    std::vector<std::size_t> groups;
    for (std::size_t g = 1; g <= c.n_heads; ++g)
        if (c.n_heads % g == 0) groups.push_back(g);
    c.n_kv_groups = groups[std::uniform_int_distribution<std::size_t>(0, groups.size() - 1)(rng)];
    c.d_head = pick({2, 4, 8});
    c.d_model = c.n_heads * c.d_head;
    c.d_ff = pick({8, 16, 32});
    c.vocab_size = pick({16, 40, 128});
    c.max_seq_len = 24;
    return c;
}

// ----------------------------------------------------------- criterion 1

Outcome decomposition_identity() {
    std::mt19937_64 rng(101);
    double worst = 0.0;
    for (int draw = 0; draw < 100; ++draw) {
        const ModelConfig c = random_config(rng);
        const Transformer m(c, rng());
        const auto tokens = random_tokens(1 + rng() % 20, c.vocab_size, rng);
        const std::size_t layer = rng() % c.n_layers;
        const AttentionTrace tr = m.attention_trace(tokens, layer);
        // Dense projection of the concatenated head contexts, in double.
        const Tensor& wo = m.layer(layer).wo;
        for (std::size_t t = 0; t < tokens.size(); ++t)
            for (std::size_t e = 0; e < c.d_model; ++e) {
                double dense = 0.0, sum = 0.0;
                for (std::size_t k = 0; k < c.d_model; ++k) dense += double(tr.head_context.at(t, k)) * wo.at(k, e);
                for (const auto& a : tr.head_outputs) sum += a.at(t, e);
                worst = std::max({worst, std::abs(sum - dense), std::abs(double(tr.output.at(t, e)) - dense)});
            }
    }
    return {worst < 1e-5, fmt::format("max |sum_j a_ij - attention output| = {:.2e} over 100 draws (< 1e-5)", worst)};
}

// ----------------------------------------------------------- criterion 2

Outcome teacher_forcing() {
    std::mt19937_64 rng(202);
    ModelConfig c = ExperimentConfig::preset("instruct_refusal").model;
    double worst = 0.0;
    for (int draw = 0; draw < 50; ++draw) {
        const Transformer m(c, 1000 + draw);
        const auto x = random_tokens(3 + rng() % 10, c.vocab_size, rng);
        const auto y = random_tokens(1 + rng() % 12, c.vocab_size, rng);
        worst = std::max(worst, std::abs(m.seq_logprob(x, y) - stepwise_logprob(m, x, y)));
    }
    // Timing at |y| = 8 and 12 on the default toy model.
    const Transformer m(c, 7);
    std::vector<std::pair<std::vector<TokenId>, std::vector<TokenId>>> pairs;
    for (int i = 0; i < 40; ++i)
        pairs.emplace_back(random_tokens(12, c.vocab_size, rng), random_tokens(i % 2 ? 8 : 12, c.vocab_size, rng));
    double sink = 0.0;
    auto t0 = Clock::now();
    for (int rep = 0; rep < 3; ++rep)
        for (const auto& [x, y] : pairs) sink += m.seq_logprob(x, y);
    const double batched = seconds_since(t0);
    t0 = Clock::now();
    for (int rep = 0; rep < 3; ++rep)
        for (const auto& [x, y] : pairs) sink -= stepwise_logprob(m, x, y);
    const double stepwise = seconds_since(t0);
    const double speedup = stepwise / batched;
    return {worst < 1e-6 && speedup >= 2.0 && std::isfinite(sink),
            fmt::format("max |teacher-forced - stepwise| = {:.2e} over 50 pairs (< 1e-6); speedup {:.1f}x at |y| in "
                        "{{8,12}} (>= 2x)",
                        worst, speedup)};
}

// ----------------------------------------------------------- criterion 3

Tensor weighted(const Tensor& y, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    return ops::sum(ops::mul(y, uniform(y.shape(), rng, -1, 1, false)));
}

Outcome gradient_checks() {
    std::mt19937_64 rng(303);
    std::map<std::string, double> err;
    auto check = [&](const std::string& name, const std::function<Tensor()>& f, std::vector<Tensor> in) {
        err[name] = std::max(err[name], max_grad_error(f, std::move(in)));
    };
    Tensor a = uniform({3, 4}, rng), b = uniform({4, 2}, rng), bt = uniform({5, 4}, rng), c = uniform({3, 4}, rng);
    Tensor v = uniform({4}, rng);
    check("matmul", [&] { return weighted(ops::matmul(a, b), 1); }, {a, b});
    check("matmul_nt", [&] { return weighted(ops::matmul_nt(a, bt), 2); }, {a, bt});
    check("transpose", [&] { return weighted(ops::transpose(a), 3); }, {a});
    check("add", [&] { return weighted(ops::add(a, c), 4); }, {a, c});
    check("sub", [&] { return weighted(ops::sub(a, c), 5); }, {a, c});
    check("mul", [&] { return weighted(ops::mul(a, c), 6); }, {a, c});
    check("scale", [&] { return weighted(ops::scale(a, -1.7f), 7); }, {a});
    check("add_rowvec", [&] { return weighted(ops::add_rowvec(a, v), 8); }, {a, v});
    check("add_n", [&] { std::vector<Tensor> t{a, c, a}; return weighted(ops::add_n(t), 9); }, {a, c});
    check("sum", [&] { return ops::sum(ops::mul(a, a)); }, {a});
    check("mean", [&] { return ops::mean(ops::mul(a, a)); }, {a});
    Tensor act({2, 3}, {0.5f, -0.7f, 1.2f, -0.3f, 0.9f, -1.5f}, true);  // away from relu's kink
    check("relu", [&] { return weighted(ops::relu(act), 10); }, {act});
    check("sigmoid", [&] { return weighted(ops::sigmoid(act), 11); }, {act});
    check("tanh", [&] { return weighted(ops::tanh(act), 12); }, {act});
    check("silu", [&] { return weighted(ops::silu(act), 13); }, {act});
    Tensor s = uniform({3, 5}, rng, -2, 2), sq = uniform({4, 4}, rng, -2, 2);
    check("softmax", [&] { return weighted(ops::softmax(s, 1), 14); }, {s});
    check("softmax", [&] { return weighted(ops::softmax(s, 0), 15); }, {s});
    check("log_softmax", [&] { return weighted(ops::log_softmax(s, 1), 16); }, {s});
    check("causal_softmax", [&] { return weighted(ops::causal_softmax(sq), 17); }, {sq});
    Tensor x = uniform({3, 8}, rng), w = uniform({8}, rng, 0.5f, 1.5f), y2 = uniform({3, 2}, rng);
    check("rms_norm", [&] { return weighted(ops::rms_norm(x, w), 18); }, {x, w});
    check("rope", [&] { return weighted(ops::rope(x, 4, 2), 19); }, {x});
    check("slice_rows", [&] { return weighted(ops::slice_rows(x, 1, 2), 20); }, {x});
    check("slice_cols", [&] { return weighted(ops::slice_cols(x, 2, 3), 21); }, {x});
    check("concat_cols", [&] { std::vector<Tensor> p{x, y2}; return weighted(ops::concat_cols(p), 22); }, {x, y2});
    std::vector<int32_t> ids{2, 0, 2, 1};
    check("embedding", [&] { return weighted(ops::embedding(x, ids), 23); }, {x});
    Tensor r8 = uniform({8}, rng);
    check("replace_row", [&] { return weighted(ops::replace_row(x, 1, r8), 24); }, {x, r8});
    check("add_to_row", [&] { return weighted(ops::add_to_row(x, 2, r8, -1.0f), 25); }, {x, r8});
    Tensor logits = uniform({4, 6}, rng, -2, 2), z = uniform({5, 1}, rng, -2, 2);
    std::vector<int32_t> targets{2, -100, 5, 0};
    std::vector<float> labels{1, 0, 0, 1, 1};
    check("cross_entropy_sum", [&] { return ops::cross_entropy_sum(logits, targets); }, {logits});
    check("bce_with_logits", [&] { return ops::bce_with_logits(z, labels); }, {z});

    // Whole toy model: every parameter, attention with grouped heads.
    ModelConfig mc;
    mc.n_layers = 2;
    mc.d_model = 8;
    mc.n_heads = 4;
    mc.n_kv_groups = 2;
    mc.d_head = 2;
    mc.d_ff = 8;
    mc.vocab_size = 10;
    mc.max_seq_len = 8;
    Transformer m(mc, 4);
    m.set_trainable(true);
    const std::vector<TokenId> tokens{1, 4, 2, 9, 3};
    const std::vector<int> next{4, 2, 9, 3, 0};
    err["model"] = max_grad_error([&] { return ops::cross_entropy_sum(m.forward(tokens).logits, next); }, m.parameters(),
                                  1e-2f);

    double worst = 0.0;
    std::string worst_name;
    for (const auto& [n, e] : err)
        if (e >= worst) {
            worst = e;
            worst_name = n;
        }
    std::string failing;
    for (const auto& [n, e] : err)
        if (!(e < 1e-3)) failing += fmt::format(" {}={:.1e}", n, e);
    return {failing.empty(), fmt::format("{} checks, worst relative error {:.2e} ({}); full model {:.2e} (< 1e-3){}",
                                         err.size(), worst, worst_name, err["model"],
                                         failing.empty() ? "" : "; failing:" + failing)};
}

// ----------------------------------------------------------- criterion 9

Outcome edit_optimality() {
    std::mt19937_64 rng(909);
    double worst = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        const auto e = random_instance(rng, 3 + trial % 4, 5 + trial % 3, 6 + trial % 5, 1 + trial % 4);
        const Matrix delta = edit_inject(e.W, e.Kc, e.Vc, e.Kp, e.Vp);
        const Matrix oracle = least_squares_delta(e.W, hcat(e.Kc, e.Kp), hcat(e.Vc, e.Vp));
        worst = std::max(worst, frob(minus(delta, oracle)) / frob(oracle));
    }
    const auto e = random_instance(rng, 4, 5, 7, 3);
    bool zero_empty = true, zero_met = true;
    for (double v : edit_inject(e.W, e.Kc, e.Vc, Matrix(5, 0), Matrix(4, 0)).data) zero_empty = zero_empty && v == 0.0;
    for (double v : edit_inject(e.W, e.Kc, e.Vc, e.Kp, product(e.W, e.Kp)).data) zero_met = zero_met && v == 0.0;
    return {worst < 1e-4 && zero_empty && zero_met,
            fmt::format("max relative Frobenius error vs normal equations {:.2e} over 20 instances (< 1e-4); empty "
                        "K_p gives 0: {}; V_p = W K_p gives 0: {}",
                        worst, zero_empty ? "yes" : "no", zero_met ? "yes" : "no")};
}

// ---------------------------------------------------------- criterion 10

Outcome lora_merge_equivalence() {
    ModelConfig c = ExperimentConfig::preset("instruct_refusal").model;
    std::mt19937_64 rng(1010);
    double merged_diff = 0.0, fresh_diff = 0.0;
    for (int draw = 0; draw < 5; ++draw) {
        Transformer m(c, 50 + draw);
        const auto tokens = random_tokens(16, c.vocab_size, rng);
        const auto base = m.forward(tokens).logits.to_vector();
        LoraOptions o;
        o.rank = 4 + draw;
        o.alpha = 8.0f;
        attach_lora(m, o, 60 + draw);
        const auto fresh = m.forward(tokens).logits.to_vector();
        for (std::size_t i = 0; i < base.size(); ++i) fresh_diff = std::max(fresh_diff, double(std::abs(fresh[i] - base[i])));
        for (auto& [name, a] : m.adapters())
            for (auto& v : a.up.mutable_data()) v = std::normal_distribution<float>(0.0f, 0.2f)(rng);
        const auto adapted = m.forward(tokens).logits.to_vector();
        lora_merge(m);
        const auto merged = m.forward(tokens).logits.to_vector();
        for (std::size_t i = 0; i < base.size(); ++i)
            merged_diff = std::max(merged_diff, double(std::abs(adapted[i] - merged[i])));
    }
    return {merged_diff < 1e-5 && fresh_diff <= 1e-6,
            fmt::format("adapter vs merged max logit difference {:.2e} (< 1e-5); zero-initialised adapter moves logits "
                        "by {:.2e} (<= 1e-6)",
                        merged_diff, fresh_diff)};
}

// -------------------------------------------------------- pipeline parts

struct Runs {
    fs::path instruct, instruct_again, classify;
    double instruct_train_s = 0.0, classify_train_s = 0.0;
    bool instruct_ok = false, again_ok = false, classify_ok = false;
    std::string error;
};

CommandContext context(const fs::path& dir, const std::string& preset) {
    CommandContext ctx;
    ctx.config = config_from_json({{"preset", preset}});
    ctx.run_dir = dir;
    ctx.threads = 1;
    fs::remove_all(dir);
    return ctx;
}

// Full default pipeline; returns the wall time of the train step.
double full_run(const CommandContext& ctx) {
    cmd_gen_data(ctx);
    const auto t0 = Clock::now();
    progress("  train: " + cmd_train(ctx).line());
    const double train_s = seconds_since(t0);
    for (auto fn : {cmd_inject_edit, cmd_probe, cmd_attribute, cmd_ablate, cmd_vector, cmd_sweep, cmd_report})
        progress("  " + fn(ctx).line());
    return train_s;
}

std::map<std::string, std::string> csv_hashes(const fs::path& dir) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".csv")
            out[fs::relative(e.path(), dir).string()] = sha256_file(e.path());
    return out;
}

const Gate* find_gate(const std::vector<Gate>& gates, const std::string& name) {
    for (const auto& g : gates)
        if (g.name == name) return &g;
    return nullptr;
}

Outcome from_gate(const fs::path& dir, const std::string& name) {
    const auto gates = evaluate_gates(dir);
    const Gate* g = find_gate(gates, name);
    if (!g || !g->available) return {false, name + " artifacts missing"};
    return {g->pass, g->detail};
}

Outcome injection(const Runs& r) {
    if (!r.instruct_ok || !r.classify_ok) return {false, "pipeline run failed: " + r.error};
    const Outcome a = from_gate(r.instruct, "injection"), b = from_gate(r.classify, "injection");
    const bool fast = r.instruct_train_s <= 900 && r.classify_train_s <= 900;
    return {a.pass && b.pass && fast,
            fmt::format("instruct/fixed output: {} [train {:.0f}s]; classify/label flip: {} [train {:.0f}s] (<= 900s "
                        "each)",
                        a.detail, r.instruct_train_s, b.detail, r.classify_train_s)};
}

// ----------------------------------------------------------- criterion 7

Outcome self_substitution(const Runs& r) {
    if (!r.instruct_ok) return {false, "pipeline run failed: " + r.error};
    const ExperimentConfig cfg = config_from_json({{"preset", "instruct_refusal"}});
    Transformer m(cfg.model, 0);
    m.load_parameters(load_checkpoint(r.instruct / "models/backdoor.bkdt"));
    const Tokenizer tok = Tokenizer::synthetic();
    const TaskGenerator gen(TaskKind::kInstruct, tok);
    std::mt19937_64 rng(707);
    const auto target = format_target(tok, tok.encode(cfg.poison.fixed_output));
    double worst = 0.0;
    std::size_t checked = 0;
    for (int s = 0; s < 4; ++s) {
        const auto prompt = format_prompt(tok, gen.next(rng).input);
        const std::vector<std::vector<TokenId>> one{prompt};
        const MeanHeadActivations own = average_activations(m, one);
        for (std::size_t l = 0; l < cfg.model.n_layers; ++l)
            for (std::size_t h = 0; h < cfg.model.n_heads; ++h) {
                worst = std::max(worst, std::abs(cie(m, {int(l), int(h)}, prompt, target, own)));
                ++checked;
            }
    }
    return {worst < 1e-6, fmt::format("max |CIE| with the head's own activation = {:.2e} over {} head/input cases of "
                                      "the injected model (< 1e-6)",
                                      worst, checked)};
}

}  // namespace

int main(int argc, char** argv) {
    fs::path work = fs::temp_directory_path() / "bkdattr_acceptance";
    std::set<int> only;
    for (int i = 1; i < argc; ++i) {
        const std::string a = argv[i];
        if (a == "--work-dir" && i + 1 < argc) {
            work = argv[++i];
        } else if (a == "--only" && i + 1 < argc) {
            std::stringstream ss(argv[++i]);
            for (std::string n; std::getline(ss, n, ',');) only.insert(std::stoi(n));
        } else {
            std::cerr << "usage: acceptance [--work-dir DIR] [--only 1,2,...]\n";
            return 2;
        }
    }
    auto wanted = [&](int n) { return only.empty() || only.count(n); };
    std::map<int, Outcome> results;
    auto run = [&](int n, const std::function<Outcome()>& f) {
        if (!wanted(n)) return;
        const auto t0 = Clock::now();
        try {
            results[n] = f();
        } catch (const std::exception& e) {
            results[n] = {false, std::string("exception: ") + e.what()};
        }
        progress(fmt::format("criterion {} done in {:.0f}s", n, seconds_since(t0)));
    };

    run(1, decomposition_identity);
    run(2, teacher_forcing);
    run(3, gradient_checks);
    run(9, edit_optimality);
    run(10, lora_merge_equivalence);

    Runs runs;
    runs.instruct = work / "instruct";
    runs.instruct_again = work / "instruct_again";
    runs.classify = work / "classify";
    const bool need_instruct = wanted(4) || wanted(5) || wanted(6) || wanted(7) || wanted(8) || wanted(11);
    if (need_instruct) {
        try {
            progress("full pipeline, instruct_refusal preset -> " + runs.instruct.string());
            runs.instruct_train_s = full_run(context(runs.instruct, "instruct_refusal"));
            runs.instruct_ok = true;
        } catch (const std::exception& e) {
            runs.error = e.what();
        }
    }
    if (wanted(4)) {
        try {
            progress("gen-data + train, classify_flip preset -> " + runs.classify.string());
            const CommandContext ctx = context(runs.classify, "classify_flip");
            cmd_gen_data(ctx);
            const auto t0 = Clock::now();
            progress("  train: " + cmd_train(ctx).line());
            runs.classify_train_s = seconds_since(t0);
            runs.classify_ok = true;
        } catch (const std::exception& e) {
            runs.error += std::string(" ") + e.what();
        }
    }
    run(4, [&] { return injection(runs); });
    run(5, [&] { return runs.instruct_ok ? from_gate(runs.instruct, "probe") : Outcome{false, runs.error}; });
    run(6, [&] { return runs.instruct_ok ? from_gate(runs.instruct, "ablation") : Outcome{false, runs.error}; });
    run(7, [&] { return self_substitution(runs); });
    run(8, [&] { return runs.instruct_ok ? from_gate(runs.instruct, "vector") : Outcome{false, runs.error}; });
    run(11, [&]() -> Outcome {
        if (!runs.instruct_ok) return {false, runs.error};
        progress("second full pipeline with identical config -> " + runs.instruct_again.string());
        full_run(context(runs.instruct_again, "instruct_refusal"));
        const auto a = csv_hashes(runs.instruct), b = csv_hashes(runs.instruct_again);
        std::string differ;
        for (const auto& [rel, h] : a)
            if (!b.count(rel) || b.at(rel) != h) differ += " " + rel;
        for (const auto& [rel, h] : b)
            if (!a.count(rel)) differ += " " + rel;
        return {differ.empty() && !a.empty(),
                fmt::format("{} CSV artifacts compared{}", a.size(),
                            differ.empty() ? ", all byte-identical" : "; differing:" + differ)};
    });

    int failed = 0;
    for (const auto& [n, o] : results) {
        std::printf("%s criterion %d: %s\n", o.pass ? "PASS" : "FAIL", n, o.detail.c_str());
        failed += !o.pass;
    }
    std::printf("%zu criteria, %d failed\n", results.size(), failed);
    return failed ? 1 : 0;
}
