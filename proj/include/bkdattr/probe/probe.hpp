#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "bkdattr/core/tensor.hpp"
#include "bkdattr/probe/hidden.hpp"

namespace bkd {

enum class ProbeKind { kMlp, kSvm };

std::string to_string(ProbeKind kind);
ProbeKind probe_kind_from_string(const std::string& name);

struct ProbeOptions {
    bool standardize = false;  // z-score features with train-split statistics
    std::uint64_t seed = 0;
    // MLP
    std::size_t hidden = 100;
    double lr = 1e-3;
    std::size_t max_epochs = 200;
    std::size_t patience = 10;
    std::size_t batch_size = 32;
    // SVM
    double C = 1.0;
    double tolerance = 1e-3;
    std::size_t max_iterations = 1000000;
};

struct MlpWeights {
    Tensor w1, b1, w2, b2;  // [d x h], [h], [h x 1], [1]
};

struct SvmModel {
    std::vector<std::vector<float>> support;
    std::vector<double> coef;  // alpha_i * y_i, y in {-1, +1}
    double bias = 0.0;
    double gamma = 0.0;
};

class Probe {
   public:
    Probe() = default;
    Probe(ProbeKind kind, std::size_t dim, std::vector<float> mean, std::vector<float> inv_std);

    ProbeKind kind() const { return kind_; }
    std::size_t dim() const { return dim_; }

    // MLP: probability of label 1 in (0, 1). SVM: signed kernel expansion.
    double score(std::span<const float> x) const;
    int predict(std::span<const float> x) const;

    MlpWeights& mlp() { return mlp_; }
    const MlpWeights& mlp() const { return mlp_; }
    SvmModel& svm() { return svm_; }
    const SvmModel& svm() const { return svm_; }

    std::vector<float> transform(std::span<const float> x) const;

   private:
    ProbeKind kind_ = ProbeKind::kMlp;
    std::size_t dim_ = 0;
    std::vector<float> mean_, inv_std_;
    MlpWeights mlp_;
    SvmModel svm_;
};

// Trains on the train split (MLP early-stops on val accuracy). Raises
// ContractError unless both classes occur in the train split.
Probe train_probe(const HiddenDataset& h, ProbeKind kind, const ProbeOptions& options = {});

Probe train_mlp_probe(const HiddenDataset& h, const ProbeOptions& options);
Probe train_svm_probe(const HiddenDataset& h, const ProbeOptions& options);

// Accuracy of `probe` on the given rows of h.
double accuracy(const Probe& probe, const HiddenDataset& h, std::span<const std::size_t> rows);

}  // namespace bkd
