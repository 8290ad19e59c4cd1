#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <set>

#include "bkdattr/core/errors.hpp"
#include "bkdattr/vector/backdoor_vector.hpp"

using namespace bkd;

namespace {

class VectorTest : public ::testing::Test {
   protected:
    VectorTest() : tok(Tokenizer::synthetic()), model(config(), 41) {
        std::mt19937_64 rng(42);
        std::uniform_int_distribution<int> d(4, static_cast<int>(tok.size()) - 1);
        for (int i = 0; i < 10; ++i) {
            std::vector<TokenId> p{tok.bos()};
            for (int j = 0; j < 5; ++j) p.push_back(d(rng));
            prompts.push_back(p);
        }
        std::normal_distribution<float> n(0.0f, 2.0f);
        mean.sample_count = 1;
        for (int l = 0; l < 3; ++l)
            for (int h = 0; h < 4; ++h) {
                auto& v = mean.values[{l, h}];
                v.resize(16);
                for (auto& x : v) x = n(rng);
            }
        matrix.n_layers = 3;
        matrix.n_heads = 4;
        matrix.pair_count = 1;
        for (int i = 0; i < 12; ++i) matrix.scores.push_back(std::sin(1.7 * i));
    }

    ModelConfig config() const {
        ModelConfig c;
        c.n_layers = 3;
        c.d_model = 16;
        c.n_heads = 4;
        c.n_kv_groups = 4;
        c.d_head = 4;
        c.d_ff = 24;
        c.vocab_size = tok.size();
        c.max_seq_len = 24;
        return c;
    }

    // Uses the first decoded word of the plain model as the target so that
    // baselines are neither all-zero nor all-one by construction.
    AsrCriterion criterion() const {
        GenerateOptions go;
        go.eos = tok.eos();
        const auto out = tok.decode(model.generate(prompts[0], 4, {}, go));
        return AsrCriterion::substring(out.empty() ? "<none>" : out.substr(0, out.find(' ')));
    }

    Tokenizer tok;
    Transformer model;
    std::vector<std::vector<TokenId>> prompts;
    MeanHeadActivations mean;
    AcieMatrix matrix;
};

TEST_F(VectorTest, DefaultKIsThreePercentRoundedUp) {
    ModelConfig c = config();
    EXPECT_EQ(default_vector_k(c), 1u);
    c.n_layers = 32;
    c.n_heads = 32;
    EXPECT_EQ(default_vector_k(c), 31u);  // ceil(30.72)
    c.n_layers = 6;
    c.n_heads = 8;
    EXPECT_EQ(default_vector_k(c), 2u);
}

TEST_F(VectorTest, ReconstructsFromStoredMeans) {
    for (std::size_t k : {1u, 3u, 12u}) {
        const auto vec = extract_vector(mean, matrix, k);
        EXPECT_EQ(vec.k, k);
        EXPECT_EQ(vec.source_heads, top_k_heads(matrix, k));
        std::vector<float> oracle(16, 0.0f);
        for (const auto& h : vec.source_heads)
            for (std::size_t i = 0; i < 16; ++i) oracle[i] += mean.values.at(h)[i];
        EXPECT_EQ(vec.v, oracle);
    }
    EXPECT_EQ(extract_vector(mean, matrix, 1).v, mean.values.at(top_k_heads(matrix, 1)[0]));
}

TEST_F(VectorTest, ProvenanceTracksMatrix) {
    const auto a = extract_vector(mean, matrix, 2);
    EXPECT_EQ(a.provenance, acie_fingerprint(matrix));
    EXPECT_EQ(a.provenance.size(), 64u);
    AcieMatrix other = matrix;
    other.scores[5] += 1e-12;
    EXPECT_NE(acie_fingerprint(other), a.provenance);
}

TEST_F(VectorTest, ZeroMeansGiveZeroVector) {
    MeanHeadActivations zero = mean;
    for (auto& [h, v] : zero.values) std::fill(v.begin(), v.end(), 0.0f);
    const auto vec = extract_vector(zero, matrix, 5);
    EXPECT_TRUE(std::all_of(vec.v.begin(), vec.v.end(), [](float x) { return x == 0.0f; }));
}

TEST_F(VectorTest, RejectsBadArguments) {
    EXPECT_THROW(extract_vector(mean, matrix, 0), ContractError);
    EXPECT_THROW(extract_vector(mean, matrix, 13), ContractError);
    MeanHeadActivations partial;
    EXPECT_THROW(extract_vector(partial, matrix, 1), ContractError);
    const auto vec = extract_vector(mean, matrix, 2);
    const auto crit = criterion();
    EXPECT_THROW(intervene(model, tok, vec, 3, 1, prompts, crit), ContractError);
    EXPECT_THROW(intervene(model, tok, vec, 0, 0, prompts, crit), ContractError);
    EXPECT_THROW(random_baseline(model, tok, mean, 2, vec.source_heads, 0, 1, 1, prompts, crit), ContractError);
}

TEST_F(VectorTest, ZeroVectorChangesNoToken) {
    BackdoorVector zero;
    zero.v.assign(16, 0.0f);
    zero.k = 1;
    GenerateOptions go;
    go.eos = tok.eos();
    for (int layer = 0; layer < 3; ++layer)
        for (float sign : {1.0f, -1.0f}) {
            const std::vector<HookSpec> hooks{HookSpec::add_to_hidden(layer, sign, zero.v)};
            for (const auto& p : prompts) EXPECT_EQ(model.generate(p, 6, hooks, go), model.generate(p, 6, {}, go));
        }
    const auto crit = criterion();
    const auto sweep = layer_sweep(model, tok, zero, 1, prompts, crit);
    ASSERT_EQ(sweep.layers.size(), 3u);
    for (const auto& r : sweep.layers) EXPECT_DOUBLE_EQ(r.asr, r.baseline_asr);
    EXPECT_EQ(sweep.best_layer, 0);
}

TEST_F(VectorTest, InterventionIsOneHookAtLastPromptToken) {
    const auto vec = extract_vector(mean, matrix, 3);
    const auto crit = criterion();
    GenerateOptions go;
    go.eos = tok.eos();
    for (int sign : {1, -1}) {
        InterventionOptions opts;
        opts.max_new = 6;
        opts.scale = 1.5f;
        std::vector<float> scaled = vec.v;
        for (auto& x : scaled) x *= 1.5f;
        const std::vector<HookSpec> hooks{HookSpec::add_to_hidden(1, static_cast<float>(sign), scaled)};
        std::vector<std::string> manual;
        for (const auto& p : prompts) manual.push_back(tok.decode(model.generate(p, 6, hooks, go)));
        const auto r = intervene(model, tok, vec, 1, sign, prompts, crit, opts);
        EXPECT_DOUBLE_EQ(r.asr, eval_asr(manual, crit));
        EXPECT_EQ(r.layer, 1);
        EXPECT_EQ(r.sign, sign);
        EXPECT_EQ(r.condition, sign > 0 ? InputCondition::kClean : InputCondition::kTriggered);
        EXPECT_GE(r.asr, 0.0);
        EXPECT_LE(r.asr, 1.0);
    }
}

TEST_F(VectorTest, SweepPicksExtremeLayer) {
    BackdoorVector vec = extract_vector(mean, matrix, 4);
    for (auto& x : vec.v) x *= 3.0f;
    const auto crit = criterion();
    for (int sign : {1, -1}) {
        const auto s = layer_sweep(model, tok, vec, sign, prompts, crit);
        ASSERT_EQ(s.layers.size(), 3u);
        for (std::size_t l = 0; l < 3; ++l) {
            EXPECT_EQ(s.layers[l].layer, static_cast<int>(l));
            if (sign > 0) {
                EXPECT_GE(s.best().asr, s.layers[l].asr);
            } else {
                EXPECT_LE(s.best().asr, s.layers[l].asr);
            }
        }
        for (int l = 0; l < s.best_layer; ++l) EXPECT_NE(s.layers[l].asr, s.best().asr);
    }
}

TEST_F(VectorTest, RandomBaselineIsSeededAndAvoidsGenuineSet) {
    const auto genuine = top_k_heads(matrix, 2);
    const auto crit = criterion();
    InterventionOptions opts;
    opts.max_new = 4;
    const auto a = random_baseline(model, tok, mean, 2, genuine, 6, 9, 1, prompts, crit, opts);
    const auto b = random_baseline(model, tok, mean, 2, genuine, 6, 9, 1, prompts, crit, opts);
    ASSERT_EQ(a.groups.size(), 6u);
    EXPECT_EQ(a.groups, b.groups);
    EXPECT_EQ(a.effects, b.effects);
    std::vector<HeadId> g_sorted = genuine;
    std::sort(g_sorted.begin(), g_sorted.end());
    double sum = 0.0;
    for (std::size_t i = 0; i < a.groups.size(); ++i) {
        EXPECT_EQ(a.groups[i].size(), 2u);
        EXPECT_NE(a.groups[i], g_sorted);
        EXPECT_EQ(std::set<HeadId>(a.groups[i].begin(), a.groups[i].end()).size(), 2u);
        EXPECT_DOUBLE_EQ(a.effects[i], std::abs(a.sweeps[i].best().delta()));
        sum += a.effects[i];
    }
    EXPECT_DOUBLE_EQ(a.mean_effect, sum / 6.0);
}

TEST_F(VectorTest, RandomBaselineNeverReturnsExcludedSet) {
    // With 12 heads and k = 11 there are only 12 sets; one is excluded.
    const auto genuine = top_k_heads(matrix, 11);
    std::vector<HeadId> g_sorted = genuine;
    std::sort(g_sorted.begin(), g_sorted.end());
    InterventionOptions opts;
    opts.max_new = 1;
    const auto r = random_baseline(model, tok, mean, 11, genuine, 20, 3, -1, prompts, criterion(), opts);
    for (const auto& g : r.groups) EXPECT_NE(g, g_sorted);
}

}  // namespace
