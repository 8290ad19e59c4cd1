#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "bkdattr/core/errors.hpp"
#include "bkdattr/probe/hidden.hpp"
#include "bkdattr/probe/ilca.hpp"
#include "bkdattr/probe/probe.hpp"

using namespace bkd;

namespace {

HiddenDataset clouds(std::size_t per_class, std::size_t d, double separation, std::uint64_t seed,
                     bool shuffle_labels = false) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> noise(0.0f, 1.0f);
    HiddenDataset h;
    h.dim = d;
    for (int cls : {0, 1})
        for (std::size_t i = 0; i < per_class; ++i) {
            std::vector<float> v(d);
            for (auto& x : v) x = noise(rng);
            v[0] += static_cast<float>(cls == 1 ? separation : -separation);
            h.vectors.push_back(std::move(v));
            h.labels.push_back(cls);
        }
    if (shuffle_labels) std::shuffle(h.labels.begin(), h.labels.end(), rng);
    h.splits = stratified_split(h.labels, seed + 1);
    return h;
}

double test_accuracy(const Probe& p, const HiddenDataset& h) { return accuracy(p, h, h.indices(Split::kTest)); }

ModelConfig tiny() {
    ModelConfig c;
    c.n_layers = 4;
    c.d_model = 16;
    c.n_heads = 4;
    c.n_kv_groups = 4;
    c.d_head = 4;
    c.d_ff = 24;
    c.vocab_size = 30;
    c.max_seq_len = 16;
    return c;
}

std::vector<std::vector<TokenId>> prompts(std::size_t n, std::uint64_t seed, TokenId lead) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> d(5, 29);
    std::vector<std::vector<TokenId>> out(n);
    for (auto& p : out) {
        p = {1};
        for (int i = 0; i < 5; ++i) p.push_back(d(rng));
        p.push_back(lead);
    }
    return out;
}

}  // namespace

TEST(Split, StratifiedSixTwoTwo) {
    std::vector<int> labels(103, 0);
    for (std::size_t i = 0; i < 47; ++i) labels[i] = 1;
    auto s = stratified_split(labels, 3);
    for (int cls : {0, 1}) {
        double n = 0, train = 0, val = 0, test = 0;
        for (std::size_t i = 0; i < labels.size(); ++i) {
            if (labels[i] != cls) continue;
            ++n;
            train += s[i] == Split::kTrain;
            val += s[i] == Split::kVal;
            test += s[i] == Split::kTest;
        }
        EXPECT_LE(std::abs(train - 0.6 * n), 1.0);
        EXPECT_LE(std::abs(val - 0.2 * n), 1.0);
        EXPECT_LE(std::abs(test - 0.2 * n), 1.0);
    }
    EXPECT_EQ(s, stratified_split(labels, 3));
}

TEST(MlpProbe, SeparatesWellSeparatedClouds) {
    auto h = clouds(150, 8, 4.0, 1);
    Probe p = train_probe(h, ProbeKind::kMlp);
    EXPECT_DOUBLE_EQ(test_accuracy(p, h), 1.0);
    for (const auto& v : h.vectors) {
        const double s = p.score(v);
        EXPECT_GT(s, 0.0);
        EXPECT_LT(s, 1.0);
    }
}

TEST(SvmProbe, SeparatesWellSeparatedClouds) {
    auto h = clouds(150, 8, 4.0, 1);
    Probe p = train_probe(h, ProbeKind::kSvm);
    EXPECT_DOUBLE_EQ(test_accuracy(p, h), 1.0);
}

TEST(Probes, ShuffledLabelsAreNearChance) {
    for (auto kind : {ProbeKind::kMlp, ProbeKind::kSvm}) {
        double total = 0;
        for (std::uint64_t seed = 0; seed < 4; ++seed) {
            auto h = clouds(250, 8, 0.0, 10 + seed, true);
            total += test_accuracy(train_probe(h, kind), h);
        }
        EXPECT_NEAR(total / 4, 0.5, 0.1) << to_string(kind);
    }
}

TEST(SvmProbe, TwoPoints) {
    HiddenDataset h;
    h.dim = 3;
    h.vectors = {{1, 0, 0}, {-1, 0, 0}};
    h.labels = {1, 0};
    h.splits = {Split::kTrain, Split::kTrain};
    Probe p = train_probe(h, ProbeKind::kSvm);
    EXPECT_EQ(p.predict(h.vectors[0]), 1);
    EXPECT_EQ(p.predict(h.vectors[1]), 0);
}

TEST(SvmProbe, SolutionSatisfiesKkt) {
    // Checked from the outside: margins y f(x) against the dual variables.
    auto h = clouds(80, 5, 1.0, 4);
    ProbeOptions o;
    Probe p = train_svm_probe(h, o);
    const auto& m = p.svm();
    double coef_sum = 0;
    for (double c : m.coef) coef_sum += c;
    EXPECT_NEAR(coef_sum, 0.0, 1e-9);
    const double tol = 2e-3;
    for (auto r : h.indices(Split::kTrain)) {
        const double y = h.labels[r] == 1 ? 1.0 : -1.0;
        const double margin = y * p.score(h.vectors[r]);
        double alpha = 0;
        for (std::size_t s = 0; s < m.support.size(); ++s)
            if (m.support[s] == p.transform(h.vectors[r])) alpha = std::abs(m.coef[s]);
        if (alpha == 0.0) {
            EXPECT_GE(margin, 1.0 - tol);
        } else if (alpha < o.C - 1e-12) {
            EXPECT_NEAR(margin, 1.0, tol);
        } else {
            EXPECT_LE(margin, 1.0 + tol);
        }
        EXPECT_LE(alpha, o.C + 1e-12);
    }
}

TEST(Probes, SingleClassIsRejected) {
    auto h = clouds(20, 4, 2.0, 1);
    for (auto& l : h.labels) l = 1;
    EXPECT_THROW(train_probe(h, ProbeKind::kMlp), ContractError);
    EXPECT_THROW(train_probe(h, ProbeKind::kSvm), ContractError);
}

TEST(Probes, StandardizationKeepsAccuracy) {
    auto h = clouds(100, 6, 4.0, 2);
    for (auto& v : h.vectors) v[3] = v[3] * 100.0f + 50.0f;
    ProbeOptions o;
    o.standardize = true;
    EXPECT_DOUBLE_EQ(test_accuracy(train_probe(h, ProbeKind::kSvm, o), h), 1.0);
    EXPECT_DOUBLE_EQ(test_accuracy(train_probe(h, ProbeKind::kMlp, o), h), 1.0);
}

TEST(Probes, DeterministicPerSeed) {
    auto h = clouds(60, 6, 1.0, 2);
    ProbeOptions o;
    o.seed = 9;
    Probe a = train_probe(h, ProbeKind::kMlp, o), b = train_probe(h, ProbeKind::kMlp, o);
    EXPECT_EQ(a.mlp().w1.to_vector(), b.mlp().w1.to_vector());
    EXPECT_EQ(a.mlp().w2.to_vector(), b.mlp().w2.to_vector());
}

TEST(Ilca, EqualsHandCount) {
    auto h = clouds(60, 6, 0.7, 5);
    Probe p = train_probe(h, ProbeKind::kMlp);
    std::size_t correct = 0, total = 0;
    for (std::size_t i = 0; i < h.size(); ++i) {
        if (h.splits[i] != Split::kTest) continue;
        ++total;
        correct += (p.score(h.vectors[i]) > 0.5 ? 1 : 0) == h.labels[i];
    }
    EXPECT_EQ(ilca(p, h), double(correct) / double(total));
}

TEST(Ilca, ConstantProbeScoresHalfOnBalancedData) {
    auto h = clouds(50, 4, 2.0, 5);
    Probe p = train_probe(h, ProbeKind::kMlp);
    for (auto& v : p.mlp().w2.mutable_data()) v = 0.0f;
    p.mlp().b2.mutable_data()[0] = 3.0f;
    EXPECT_DOUBLE_EQ(ilca(p, h), 0.5);
}

TEST(Ilca, MemorisingProbeOnOwnTrainingData) {
    auto h = clouds(40, 4, 0.3, 6);
    for (auto& s : h.splits) s = s == Split::kTest ? Split::kTrain : s;
    Probe p = train_probe(h, ProbeKind::kSvm, ProbeOptions{.C = 1e6});
    EXPECT_DOUBLE_EQ(accuracy(p, h, h.indices(Split::kTrain)), 1.0);
}

TEST(Ilca, RejectsEmptyTestAndWidthMismatch) {
    auto h = clouds(40, 4, 2.0, 6);
    Probe p = train_probe(h, ProbeKind::kMlp);
    auto wide = clouds(40, 5, 2.0, 6);
    EXPECT_THROW(ilca(p, wide), ContractError);
    for (auto& s : h.splits) s = Split::kTrain;
    EXPECT_THROW(ilca(p, h), ContractError);
}

TEST(Harvest, CountsLayersAndDeterminism) {
    Transformer m(tiny(), 3);
    auto clean = prompts(100, 1, 2);
    auto poisoned = prompts(100, 2, 3);
    std::vector<int> layers{0, 1, 2, 3};
    auto hs = harvest_hidden(m, clean, poisoned, layers, 7);
    ASSERT_EQ(hs.size(), 4u);
    for (const auto& h : hs) {
        EXPECT_EQ(h.size(), 200u);
        EXPECT_EQ(h.vectors[0].size(), 16u);
        EXPECT_EQ(h.splits, hs[0].splits);
    }
    auto again = harvest_hidden(m, clean, poisoned, layers, 7, 3);
    for (std::size_t l = 0; l < 4; ++l) EXPECT_EQ(hs[l].vectors, again[l].vectors);
    // The capture is the block output at the last prompt token.
    std::vector<HookSpec> cap{HookSpec::capture_hidden(2)};
    EXPECT_EQ(hs[2].vectors[5], m.forward(clean[5], cap).record.hidden_states.at(2));
    std::vector<int> bad{4};
    EXPECT_THROW(harvest_hidden(m, clean, poisoned, bad, 7), ContractError);
}

TEST(IlcaMatrix, ShapeRangeAndDiagonal) {
    // A final marker token that differs between classes is visible at every
    // layer of a random model's last position.
    Transformer m(tiny(), 3);
    auto hs = harvest_hidden(m, prompts(80, 1, 2), prompts(80, 2, 3), std::vector<int>{0, 1, 2, 3}, 7);
    for (auto kind : {ProbeKind::kMlp, ProbeKind::kSvm}) {
        auto mat = ilca_matrix(hs, kind, {}, 2);
        ASSERT_EQ(mat.values.size(), 4u);
        for (const auto& row : mat.values) {
            ASSERT_EQ(row.size(), 4u);
            for (double v : row) {
                EXPECT_GE(v, 0.0);
                EXPECT_LE(v, 1.0);
            }
        }
        auto again = ilca_matrix(hs, kind, {}, 1);
        EXPECT_EQ(mat.values, again.values);
        for (std::size_t i = 0; i < 4; ++i) EXPECT_GE(mat.values[i][i], 0.9) << to_string(kind) << " layer " << i;
    }
}
