#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "bkdattr/core/errors.hpp"
#include "bkdattr/inject/edit.hpp"
#include "bkdattr/inject/lora.hpp"
#include "bkdattr/inject/sft.hpp"
#include "oracles.hpp"

using namespace bkd;
using namespace bkd::testing;

namespace {

ModelConfig tiny(std::size_t vocab) {
    ModelConfig c;
    c.n_layers = 2;
    c.d_model = 16;
    c.n_heads = 4;
    c.n_kv_groups = 2;
    c.d_head = 4;
    c.d_ff = 24;
    c.vocab_size = vocab;
    c.max_seq_len = 24;
    return c;
}

std::vector<TrainExample> toy_examples(std::size_t n, std::uint64_t seed) {
    const Tokenizer tok = Tokenizer::synthetic();
    DatasetPair d = build_datasets(TaskGenerator(TaskKind::kInstruct, tok), refusal_phrase_spec(tok), n, seed);
    return training_examples(tok, d, true);
}

double manual_nll(const Transformer& m, const TrainExample& ex) {
    std::vector<TokenId> seq = ex.prompt;
    seq.insert(seq.end(), ex.target.begin(), ex.target.end() - 1);
    Tensor logits = m.forward(seq).logits;
    double nll = 0;
    for (std::size_t k = 0; k < ex.target.size(); ++k) {
        auto row = logits.row(ex.prompt.size() - 1 + k);
        double mx = -1e300, z = 0;
        for (float v : row) mx = std::max(mx, double(v));
        for (float v : row) z += std::exp(v - mx);
        nll -= row[ex.target[k]] - mx - std::log(z);
    }
    return nll;
}

}  // namespace

TEST(SftLoss, MatchesManualMaskedNll) {
    auto examples = toy_examples(20, 1);
    Transformer m(tiny(Tokenizer::synthetic().size()), 3);
    std::span<const TrainExample> batch(examples.data(), 5);
    double total = 0;
    std::size_t tokens = 0;
    for (const auto& ex : batch) {
        total += manual_nll(m, ex);
        tokens += ex.target.size();
    }
    EXPECT_NEAR(sft_loss(m, batch).item(), total / tokens, 1e-5);
}

TEST(SftLoss, UniformLogitsGiveLogVocab) {
    auto examples = toy_examples(20, 1);
    const std::size_t vocab = Tokenizer::synthetic().size();
    Transformer m(tiny(vocab), 3);
    for (auto& v : m.unembedding().mutable_data()) v = 0.0f;
    EXPECT_NEAR(sft_loss(m, std::span(examples).first(4)).item(), std::log(double(vocab)), 1e-5);
}

TEST(SftLoss, PromptTokensCarryNoLoss) {
    // Changing a prompt token changes the logits at that position, but the
    // loss only moves through the target rows.
    auto examples = toy_examples(20, 1);
    Transformer m(tiny(Tokenizer::synthetic().size()), 3);
    TrainExample ex = examples[0];
    auto perfect = ex;
    const double base = sft_loss(m, std::span(&ex, 1)).item();
    EXPECT_NEAR(base * ex.target.size(), manual_nll(m, ex), 1e-4);
    EXPECT_NEAR(sft_loss(m, std::span(&perfect, 1)).item(), base, 0.0);
    TrainExample empty = ex;
    empty.target.clear();
    EXPECT_THROW(sft_loss(m, std::span(&empty, 1)), ContractError);
    EXPECT_THROW(sft_loss(m, std::span<const TrainExample>{}), ContractError);
}

TEST(Schedule, LinearWarmupThenConstant) {
    TrainConfig c;
    c.lr = 1.0;
    c.warmup_fraction = 0.1;
    EXPECT_DOUBLE_EQ(scheduled_lr(c, 0, 100), 0.1);
    EXPECT_DOUBLE_EQ(scheduled_lr(c, 4, 100), 0.5);
    EXPECT_DOUBLE_EQ(scheduled_lr(c, 9, 100), 1.0);
    EXPECT_DOUBLE_EQ(scheduled_lr(c, 50, 100), 1.0);
    c.warmup_fraction = 0.0;
    EXPECT_DOUBLE_EQ(scheduled_lr(c, 0, 100), 1.0);
}

TEST(TrainConfig, DefaultsAndValidation) {
    TrainConfig c;
    EXPECT_DOUBLE_EQ(c.lr, 1e-4);
    EXPECT_EQ(c.batch_size, 8u);
    EXPECT_EQ(c.epochs, 16u);
    EXPECT_DOUBLE_EQ(c.warmup_fraction, 0.05);
    c.warmup_fraction = 1.0;
    EXPECT_THROW(c.validate(), ContractError);
    c = TrainConfig{};
    c.lr = 0;
    EXPECT_THROW(c.validate(), ContractError);
    nlohmann::json j = TrainConfig{};
    EXPECT_EQ(j.get<TrainConfig>().batch_size, 8u);
}

TEST(Train, LossDecreasesAndIsDeterministic) {
    auto examples = toy_examples(40, 2);
    TrainConfig cfg;
    cfg.lr = 1e-2;
    cfg.epochs = 4;
    cfg.seed = 5;
    Transformer a(tiny(Tokenizer::synthetic().size()), 1), b(tiny(Tokenizer::synthetic().size()), 1);
    std::vector<std::size_t> seen;
    auto ra = train_sft(a, examples, cfg, false, [&](std::size_t e, double) { seen.push_back(e); });
    auto rb = train_sft(b, examples, cfg);
    ASSERT_EQ(ra.epoch_loss.size(), 4u);
    EXPECT_EQ(seen, (std::vector<std::size_t>{0, 1, 2, 3}));
    EXPECT_LT(ra.epoch_loss.back(), 0.7 * ra.epoch_loss.front());
    ASSERT_EQ(ra.steps.size(), rb.steps.size());
    for (std::size_t i = 0; i < ra.steps.size(); ++i) EXPECT_EQ(ra.steps[i].loss, rb.steps[i].loss);
    EXPECT_EQ(a.layer(1).w_down.to_vector(), b.layer(1).w_down.to_vector());
    EXPECT_EQ(ra.steps.size(), 4u * 6u);  // 44 examples, batch 8
    EXPECT_FALSE(a.parameters()[0].requires_grad());
}

TEST(Train, DivergenceRestoresWeightsAndThrows) {
    auto examples = toy_examples(20, 2);
    Transformer m(tiny(Tokenizer::synthetic().size()), 1);
    m.unembedding().mutable_data()[0] = std::numeric_limits<float>::quiet_NaN();
    auto before = m.layer(0).wq.to_vector();
    TrainConfig cfg;
    cfg.epochs = 1;
    EXPECT_THROW(train_sft(m, examples, cfg), TrainingError);
    EXPECT_EQ(m.layer(0).wq.to_vector(), before);
}

TEST(Train, VocabularyMismatchIsRejected) {
    const Tokenizer tok = Tokenizer::synthetic();
    DatasetPair d = build_datasets(TaskGenerator(TaskKind::kInstruct, tok), refusal_phrase_spec(tok), 20, 1);
    Transformer m(tiny(tok.size() + 1), 1);
    EXPECT_THROW(train_backdoor(m, tok, d, TrainConfig{}), ContractError);
}

TEST(Lora, FreshAdapterIsIdentity) {
    Transformer m(tiny(30), 4);
    std::vector<TokenId> tokens{1, 5, 9, 20, 3, 7};
    auto base = m.forward(tokens).logits.to_vector();
    attach_lora(m, LoraOptions{}, 9);
    EXPECT_EQ(m.adapters().size(), 14u);
    auto with = m.forward(tokens).logits.to_vector();
    for (std::size_t i = 0; i < base.size(); ++i) EXPECT_LE(std::abs(base[i] - with[i]), 1e-6);
    lora_merge(m);
    EXPECT_TRUE(m.adapters().empty());
    auto merged = m.forward(tokens).logits.to_vector();
    EXPECT_EQ(merged, base);
}

TEST(Lora, MergedForwardMatchesAdapterForward) {
    Transformer m(tiny(30), 4);
    LoraOptions o;
    o.rank = 3;
    o.alpha = 6.0f;
    attach_lora(m, o, 9);
    std::mt19937_64 rng(2);
    for (auto& [name, a] : m.adapters())
        for (auto& v : a.up.mutable_data()) v = std::normal_distribution<float>(0.0f, 0.3f)(rng);
    std::vector<TokenId> tokens{1, 5, 9, 20, 3, 7, 11};
    auto adapted = m.forward(tokens).logits.to_vector();
    auto reference = Transformer(tiny(30), 4).forward(tokens).logits.to_vector();
    double moved = 0;
    for (std::size_t i = 0; i < adapted.size(); ++i) moved = std::max(moved, double(std::abs(adapted[i] - reference[i])));
    EXPECT_GT(moved, 1e-2);
    lora_merge(m);
    auto merged = m.forward(tokens).logits.to_vector();
    for (std::size_t i = 0; i < adapted.size(); ++i) EXPECT_LT(std::abs(adapted[i] - merged[i]), 1e-5);
}

TEST(Lora, FullRankCanRepresentAnyUpdate) {
    // With r = d_in, down = I and up = target / scaling reproduce any update.
    Transformer m(tiny(30), 4);
    LoraOptions o;
    o.rank = 16;
    o.targets = {"wq"};
    attach_lora(m, o, 1);
    auto& a = m.adapters().at("layers.0.wq");
    std::mt19937_64 rng(3);
    std::vector<float> update(16 * 16);
    for (auto& v : update) v = std::normal_distribution<float>()(rng);
    auto down = a.down.mutable_data();
    for (std::size_t i = 0; i < 16; ++i)
        for (std::size_t j = 0; j < 16; ++j) down[i * 16 + j] = i == j ? 1.0f : 0.0f;
    auto up = a.up.mutable_data();
    for (std::size_t i = 0; i < update.size(); ++i) up[i] = update[i] / a.scaling();
    auto before = m.layer(0).wq.to_vector();
    lora_merge(m);
    auto after = m.layer(0).wq.to_vector();
    for (std::size_t i = 0; i < after.size(); ++i) EXPECT_NEAR(after[i] - before[i], update[i], 1e-5);
}

TEST(Lora, ShapeMismatchIsRejected) {
    Transformer m(tiny(30), 4);
    attach_lora(m, LoraOptions{}, 1);
    m.adapters().begin()->second.up = Tensor::zeros({16, 3});
    EXPECT_THROW(lora_merge(m), ContractError);
}

TEST(Lora, TrainingTouchesOnlyAdapters) {
    auto examples = toy_examples(20, 2);
    Transformer m(tiny(Tokenizer::synthetic().size()), 1);
    auto base = m.layer(0).wq.to_vector();
    LoraOptions o;
    o.rank = 4;
    attach_lora(m, o, 2);
    TrainConfig cfg;
    cfg.lr = 1e-2;
    cfg.epochs = 2;
    auto r = train_sft(m, examples, cfg, true);
    EXPECT_EQ(m.layer(0).wq.to_vector(), base);
    double up_norm = 0;
    for (float v : m.adapters().at("layers.0.wq").up.data()) up_norm += std::abs(v);
    EXPECT_GT(up_norm, 0.0);
    EXPECT_LT(r.epoch_loss.back(), r.epoch_loss.front());
}

TEST(Edit, MatchesLeastSquaresOracle) {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        auto e = random_instance(rng, 3 + trial % 4, 5 + trial % 3, 6, 2 + trial % 3);
        Matrix delta = edit_inject(e.W, e.Kc, e.Vc, e.Kp, e.Vp);
        Matrix oracle = least_squares_delta(e.W, hcat(e.Kc, e.Kp), hcat(e.Vc, e.Vp));
        EXPECT_LT(frob(minus(delta, oracle)) / frob(oracle), 1e-4) << "trial " << trial;
    }
}

TEST(Edit, ObjectiveIsStationaryAtSolution) {
    std::mt19937_64 rng(12);
    auto e = random_instance(rng, 4, 6, 8, 3);
    Matrix delta = edit_inject(e.W, e.Kc, e.Vc, e.Kp, e.Vp);
    const double f0 = edit_objective(e.W, delta, e.Kc, e.Vc, e.Kp, e.Vp);
    const double h = 1e-4;
    for (int k = 0; k < 10; ++k) {
        Matrix dir = random_matrix(4, 6, rng);
        Matrix plus = delta, minus_ = delta;
        for (std::size_t i = 0; i < dir.data.size(); ++i) {
            plus.data[i] += h * dir.data[i];
            minus_.data[i] -= h * dir.data[i];
        }
        const double deriv = (edit_objective(e.W, plus, e.Kc, e.Vc, e.Kp, e.Vp) -
                              edit_objective(e.W, minus_, e.Kc, e.Vc, e.Kp, e.Vp)) /
                             (2 * h);
        EXPECT_LT(std::abs(deriv), 1e-4 * std::max(1.0, f0));
    }
    // The edit lowers the objective relative to no edit.
    EXPECT_LT(f0, edit_objective(e.W, Matrix(4, 6), e.Kc, e.Vc, e.Kp, e.Vp));
}

TEST(Edit, TrivialCasesAreExactlyZero) {
    std::mt19937_64 rng(13);
    auto e = random_instance(rng, 4, 5, 7, 3);
    Matrix empty_k(5, 0), empty_v(4, 0);
    for (double v : edit_inject(e.W, e.Kc, e.Vc, empty_k, empty_v).data) EXPECT_EQ(v, 0.0);
    Matrix met = product(e.W, e.Kp);
    for (double v : edit_inject(e.W, e.Kc, e.Vc, e.Kp, met).data) EXPECT_EQ(v, 0.0);
}

TEST(Edit, SingularGramNeedsRegularization) {
    std::mt19937_64 rng(14);
    auto e = random_instance(rng, 3, 6, 2, 1);  // rank 3 < 6
    EXPECT_THROW(edit_inject(e.W, e.Kc, e.Vc, e.Kp, e.Vp), NumericalError);
    EditOptions reg;
    reg.regularize = true;
    Matrix delta = edit_inject(e.W, e.Kc, e.Vc, e.Kp, e.Vp, reg);
    // Regularized solution still maps the poisoned key close to its target.
    Matrix w2 = e.W;
    for (std::size_t i = 0; i < w2.data.size(); ++i) w2.data[i] += delta.data[i];
    Matrix out = product(w2, e.Kp);
    EXPECT_LT(frob(minus(out, e.Vp)), 1e-3 * std::max(1.0, frob(e.Vp)));
}

TEST(Edit, ShapeAndRetainChecks) {
    std::mt19937_64 rng(15);
    auto e = random_instance(rng, 3, 4, 6, 2);
    EXPECT_THROW(edit_inject(e.W, e.Kc, e.Vc, random_matrix(5, 2, rng), e.Vp), DimensionError);
    Matrix bad_vc = e.Vc;
    bad_vc.data[0] += 1.0;
    EXPECT_THROW(edit_inject(e.W, e.Kc, bad_vc, e.Kp, e.Vp), ContractError);
}
