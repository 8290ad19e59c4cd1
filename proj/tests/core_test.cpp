#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "bkdattr/core/adam.hpp"
#include "bkdattr/core/checkpoint.hpp"
#include "bkdattr/core/errors.hpp"
#include "bkdattr/core/ops.hpp"
#include "bkdattr/core/util.hpp"
#include "test_support.hpp"

namespace bkd {
namespace {

using testing::max_grad_error;
using testing::uniform;

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
    Tensor eye({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    Tensor a({3, 2}, {1, 2, 3, 4, 5, 6});
    EXPECT_EQ(ops::matmul(eye, a).to_vector(), a.to_vector());
}

TEST(Matmul, HandCheckedDotProduct) {
    Tensor c = ops::matmul(Tensor({1, 2}, {1, 2}), Tensor({2, 1}, {3, 4}));
    EXPECT_EQ(c.shape(), (Shape{1, 1}));
    EXPECT_FLOAT_EQ(c.item(), 11.0f);
}

TEST(Matmul, MatchesTripleLoop) {
    std::mt19937_64 rng(7);
    Tensor a = uniform({5, 7}, rng, -1, 1, false);
    Tensor b = uniform({7, 3}, rng, -1, 1, false);
    Tensor c = ops::matmul(a, b);
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = 0; j < 3; ++j) {
            double s = 0.0;
            for (std::size_t p = 0; p < 7; ++p) s += double(a.at(i, p)) * b.at(p, j);
            EXPECT_NEAR(c.at(i, j), s, 1e-6);
        }
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
    try {
        ops::matmul(Tensor::zeros({2, 3}), Tensor::zeros({4, 5}));
        FAIL() << "expected DimensionError";
    } catch (const DimensionError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("[2 x 3]"), std::string::npos) << msg;
        EXPECT_NE(msg.find("[4 x 5]"), std::string::npos) << msg;
    }
}

TEST(Softmax, UniformOnEqualLogits) {
    auto y = ops::softmax(Tensor({3}, {0, 0, 0}), 0).to_vector();
    for (float v : y) EXPECT_NEAR(v, 1.0f / 3.0f, 1e-7);
}

TEST(Softmax, LargeLogitDoesNotOverflow) {
    auto y = ops::softmax(Tensor({2}, {1000, 0}), 0).to_vector();
    EXPECT_NEAR(y[0], 1.0f, 1e-6);
    EXPECT_NEAR(y[1], 0.0f, 1e-6);
}

TEST(Softmax, RandomRowsSumToOneAlongEitherAxis) {
    std::mt19937_64 rng(3);
    Tensor x = uniform({4, 6}, rng, -5, 5, false);
    auto rows = ops::softmax(x, 1).to_vector();
    for (std::size_t i = 0; i < 4; ++i) {
        double s = 0;
        for (std::size_t j = 0; j < 6; ++j) s += rows[i * 6 + j];
        EXPECT_NEAR(s, 1.0, 1e-6);
    }
    auto cols = ops::softmax(x, 0).to_vector();
    for (std::size_t j = 0; j < 6; ++j) {
        double s = 0;
        for (std::size_t i = 0; i < 4; ++i) s += cols[i * 6 + j];
        EXPECT_NEAR(s, 1.0, 1e-6);
    }
}

TEST(Softmax, NanInputIsReported) {
    EXPECT_THROW(ops::softmax(Tensor({2}, {1.0f, std::nanf("")}), 0), NumericalError);
}

TEST(CausalSoftmax, MaskedEntriesAreExactlyZero) {
    std::mt19937_64 rng(1);
    auto p = ops::causal_softmax(uniform({4, 4}, rng, -2, 2, false));
    for (std::size_t i = 0; i < 4; ++i) {
        double s = 0;
        for (std::size_t j = 0; j < 4; ++j) {
            if (j > i) {
                EXPECT_EQ(p.at(i, j), 0.0f);
            }
            s += p.at(i, j);
        }
        EXPECT_NEAR(s, 1.0, 1e-6);
    }
}

TEST(Backward, SquaredNormGradient) {
    Tensor x({2}, {1, 2}, true);
    ops::sum(ops::mul(x, x)).backward();
    EXPECT_FLOAT_EQ(x.grad()[0], 2.0f);
    EXPECT_FLOAT_EQ(x.grad()[1], 4.0f);
}

TEST(Backward, ConstantLossGivesZeroGradients) {
    Tensor x({3}, {1, -2, 5}, true);
    ops::sub(ops::sum(x), ops::sum(x)).backward();
    for (float g : x.grad()) EXPECT_EQ(g, 0.0f);
}

TEST(Backward, NonScalarLossIsRejected) {
    Tensor x({2}, {1, 2}, true);
    EXPECT_THROW(ops::scale(x, 2.0f).backward(), ContractError);
}

TEST(Backward, GradientsAccumulateAcrossCalls) {
    Tensor x({1}, {3}, true);
    ops::sum(ops::scale(x, 2.0f)).backward();
    ops::sum(ops::scale(x, 2.0f)).backward();
    EXPECT_FLOAT_EQ(x.grad()[0], 4.0f);
}

TEST(Backward, NoGradGuardRecordsNothing) {
    Tensor x({2}, {1, 2}, true);
    NoGradGuard guard;
    Tensor y = ops::mul(x, x);
    EXPECT_FALSE(y.requires_grad());
}

// Fixed random weighting so that normalised outputs still carry gradient.
Tensor weighted(const Tensor& y, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    return ops::sum(ops::mul(y, uniform(y.shape(), rng, -1, 1, false)));
}

class GradCheck : public ::testing::Test {
   protected:
    std::mt19937_64 rng{42};
    static constexpr double kTol = 1e-3;
};

TEST_F(GradCheck, Matmul) {
    Tensor a = uniform({3, 4}, rng), b = uniform({4, 2}, rng);
    EXPECT_LT(max_grad_error([&] { return weighted(ops::matmul(a, b), 1); }, {a, b}), kTol);
}

TEST_F(GradCheck, MatmulTransposed) {
    Tensor a = uniform({3, 4}, rng), b = uniform({5, 4}, rng);
    EXPECT_LT(max_grad_error([&] { return weighted(ops::matmul_nt(a, b), 2); }, {a, b}), kTol);
}

TEST_F(GradCheck, Transpose) {
    Tensor a = uniform({3, 4}, rng);
    EXPECT_LT(max_grad_error([&] { return weighted(ops::transpose(a), 3); }, {a}), kTol);
}

TEST_F(GradCheck, ElementwiseBinary) {
    Tensor a = uniform({2, 3}, rng), b = uniform({2, 3}, rng);
    EXPECT_LT(max_grad_error([&] { return weighted(ops::add(a, b), 4); }, {a, b}), kTol);
    EXPECT_LT(max_grad_error([&] { return weighted(ops::sub(a, b), 5); }, {a, b}), kTol);
    EXPECT_LT(max_grad_error([&] { return weighted(ops::mul(a, b), 6); }, {a, b}), kTol);
    EXPECT_LT(max_grad_error([&] { return weighted(ops::scale(a, -1.7f), 7); }, {a}), kTol);
}

TEST_F(GradCheck, BroadcastAndReductions) {
    Tensor a = uniform({3, 4}, rng), v = uniform({4}, rng);
    EXPECT_LT(max_grad_error([&] { return weighted(ops::add_rowvec(a, v), 8); }, {a, v}), kTol);
    Tensor b = uniform({3, 4}, rng);
    EXPECT_LT(max_grad_error(
                  [&] {
                      std::vector<Tensor> terms{a, b, a};
                      return weighted(ops::add_n(terms), 9);
                  },
                  {a, b}),
              kTol);
    EXPECT_LT(max_grad_error([&] { return ops::mean(ops::mul(a, a)); }, {a}), kTol);
}

TEST_F(GradCheck, Activations) {
    // Keep inputs away from relu's kink.
    Tensor a({2, 3}, {0.5f, -0.7f, 1.2f, -0.3f, 0.9f, -1.5f}, true);
    EXPECT_LT(max_grad_error([&] { return weighted(ops::relu(a), 10); }, {a}), kTol);
    EXPECT_LT(max_grad_error([&] { return weighted(ops::sigmoid(a), 11); }, {a}), kTol);
    EXPECT_LT(max_grad_error([&] { return weighted(ops::tanh(a), 12); }, {a}), kTol);
    EXPECT_LT(max_grad_error([&] { return weighted(ops::silu(a), 13); }, {a}), kTol);
}

TEST_F(GradCheck, SoftmaxFamily) {
    Tensor a = uniform({3, 5}, rng, -2, 2);
    EXPECT_LT(max_grad_error([&] { return weighted(ops::softmax(a, 1), 14); }, {a}), kTol);
    EXPECT_LT(max_grad_error([&] { return weighted(ops::softmax(a, 0), 15); }, {a}), kTol);
    EXPECT_LT(max_grad_error([&] { return weighted(ops::log_softmax(a, 1), 16); }, {a}), kTol);
    Tensor s = uniform({4, 4}, rng, -2, 2);
    EXPECT_LT(max_grad_error([&] { return weighted(ops::causal_softmax(s), 17); }, {s}), kTol);
}

TEST_F(GradCheck, RmsNormAndRope) {
    Tensor x = uniform({3, 8}, rng), w = uniform({8}, rng, 0.5f, 1.5f);
    EXPECT_LT(max_grad_error([&] { return weighted(ops::rms_norm(x, w), 18); }, {x, w}), kTol);
    EXPECT_LT(max_grad_error([&] { return weighted(ops::rope(x, 4, 2), 19); }, {x}), kTol);
}

TEST_F(GradCheck, SlicingAndGathering) {
    Tensor x = uniform({4, 6}, rng), y = uniform({4, 2}, rng);
    EXPECT_LT(max_grad_error([&] { return weighted(ops::slice_rows(x, 1, 2), 20); }, {x}), kTol);
    EXPECT_LT(max_grad_error([&] { return weighted(ops::slice_cols(x, 2, 3), 21); }, {x}), kTol);
    EXPECT_LT(max_grad_error(
                  [&] {
                      std::vector<Tensor> parts{x, y};
                      return weighted(ops::concat_cols(parts), 22);
                  },
                  {x, y}),
              kTol);
    std::vector<int32_t> ids{3, 0, 3, 1};
    EXPECT_LT(max_grad_error([&] { return weighted(ops::embedding(x, ids), 23); }, {x}), kTol);
}

TEST_F(GradCheck, RowEdits) {
    Tensor x = uniform({3, 4}, rng), v = uniform({4}, rng);
    EXPECT_LT(max_grad_error([&] { return weighted(ops::replace_row(x, 1, v), 24); }, {x, v}), kTol);
    EXPECT_LT(max_grad_error([&] { return weighted(ops::add_to_row(x, 2, v, -1.0f), 25); }, {x, v}), kTol);
}

TEST_F(GradCheck, Losses) {
    Tensor logits = uniform({4, 6}, rng, -2, 2);
    std::vector<int32_t> targets{2, -100, 5, 0};
    EXPECT_LT(max_grad_error([&] { return ops::cross_entropy_sum(logits, targets); }, {logits}), kTol);
    Tensor z = uniform({5, 1}, rng, -2, 2);
    std::vector<float> labels{1, 0, 0, 1, 1};
    EXPECT_LT(max_grad_error([&] { return ops::bce_with_logits(z, labels); }, {z}), kTol);
}

TEST_F(GradCheck, TwoLayerNetwork) {
    Tensor x = uniform({6, 5}, rng, -1, 1, false);
    Tensor w1 = uniform({5, 8}, rng), b1 = uniform({8}, rng), w2 = uniform({8, 3}, rng);
    std::vector<int32_t> labels{0, 2, 1, 1, 0, 2};
    auto loss = [&] {
        Tensor h = ops::tanh(ops::add_rowvec(ops::matmul(x, w1), b1));
        return ops::cross_entropy_sum(ops::matmul(h, w2), labels);
    };
    EXPECT_LT(max_grad_error(loss, {w1, b1, w2}), kTol);
}

TEST(CrossEntropy, IgnoredTargetsContributeNothing) {
    Tensor logits({2, 3}, {1, 2, 3, 9, -4, 0.5f}, true);
    std::vector<int32_t> only_first{2, -100};
    Tensor loss = ops::cross_entropy_sum(logits, only_first);
    const double expect = -(3.0 - std::log(std::exp(1.0) + std::exp(2.0) + std::exp(3.0)));
    EXPECT_NEAR(loss.item(), expect, 1e-6);
    loss.backward();
    for (std::size_t j = 3; j < 6; ++j) EXPECT_EQ(logits.grad()[j], 0.0f);
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
    Tensor p({3}, {1, 2, 3}, true);
    ops::sum(ops::scale(p, 0.0f)).backward();
    Adam opt({p}, {.lr = 0.1f});
    opt.step();
    EXPECT_EQ(p.to_vector(), (std::vector<float>{1, 2, 3}));
    EXPECT_EQ(opt.steps(), 1);
}

TEST(Adam, FirstStepMovesByLearningRate) {
    Tensor p({1}, {0.0f}, true);
    ops::sum(p).backward();  // constant gradient 1
    Adam opt({p}, {.lr = 0.1f});
    opt.step();
    EXPECT_NEAR(p.item(), -0.1f, 1e-6);
}

TEST(Adam, ConvergesOnQuadraticBowl) {
    Tensor p({3}, {2.0f, -1.0f, 0.5f}, true);
    Tensor center({3}, {0.3f, 0.7f, -1.2f});
    Adam opt({p}, {.lr = 0.05f});
    int steps = 0;
    for (; steps < 500; ++steps) {
        opt.zero_grad();
        Tensor d = ops::sub(p, center);
        ops::sum(ops::mul(d, d)).backward();
        opt.step();
    }
    for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(p.data()[i], center.data()[i], 1e-3);
}

TEST(Adam, MissingGradientIsRejected) {
    Tensor p({2}, {1, 2}, true);
    Adam opt({p});
    EXPECT_THROW(opt.step(), ContractError);
}

TEST(Checkpoint, RoundTripsNamesShapesAndValues) {
    std::mt19937_64 rng(5);
    NamedTensors in{{"a", uniform({2, 3}, rng, -1, 1, false)}, {"bias", Tensor({4}, {1, 2, 3, 4})}};
    const std::string bytes = encode_checkpoint(in);
    EXPECT_EQ(bytes.substr(0, 4), "BKDT");
    auto out = decode_checkpoint(bytes);
    ASSERT_EQ(out.size(), 2u);
    for (std::size_t i = 0; i < 2; ++i) {
        EXPECT_EQ(out[i].first, in[i].first);
        EXPECT_EQ(out[i].second.shape(), in[i].second.shape());
        EXPECT_EQ(out[i].second.to_vector(), in[i].second.to_vector());
    }
}

TEST(Checkpoint, RejectsBadMagicAndTruncation) {
    NamedTensors in{{"w", Tensor({2}, {1, 2})}};
    std::string bytes = encode_checkpoint(in);
    EXPECT_THROW(decode_checkpoint(bytes.substr(0, bytes.size() - 1)), CorruptionError);
    bytes[0] = 'X';
    EXPECT_THROW(decode_checkpoint(bytes), CorruptionError);
}

TEST(Checkpoint, FileRoundTrip) {
    const auto path = std::filesystem::temp_directory_path() / "bkd_core_test.ckpt";
    save_checkpoint(path, {{"x", Tensor({1}, {3.5f})}});
    EXPECT_FLOAT_EQ(load_checkpoint(path)[0].second.item(), 3.5f);
    std::filesystem::remove(path);
}

TEST(Util, Sha256KnownVector) {
    EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Util, ParallelForIsIndexDeterministic) {
    std::vector<int> one(37), four(37);
    parallel_for(37, 1, [&](std::size_t i) { one[i] = static_cast<int>(i * i); });
    parallel_for(37, 4, [&](std::size_t i) { four[i] = static_cast<int>(i * i); });
    EXPECT_EQ(one, four);
}

TEST(Determinism, SameSeedSameBits) {
    std::mt19937_64 r1(99), r2(99);
    Tensor a = Tensor::randn({4, 4}, r1), b = Tensor::randn({4, 4}, r2);
    EXPECT_EQ(ops::softmax(ops::matmul(a, a), 1).to_vector(), ops::softmax(ops::matmul(b, b), 1).to_vector());
}

}  // namespace
}  // namespace bkd
