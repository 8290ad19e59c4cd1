#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "bkdattr/core/adam.hpp"
#include "bkdattr/core/errors.hpp"
#include "bkdattr/core/ops.hpp"
#include "bkdattr/probe/probe.hpp"
#include "probe_internal.hpp"

namespace bkd {

std::string to_string(ProbeKind kind) { return kind == ProbeKind::kMlp ? "mlp" : "svm"; }

ProbeKind probe_kind_from_string(const std::string& name) {
    if (name == "mlp") return ProbeKind::kMlp;
    if (name == "svm") return ProbeKind::kSvm;
    throw ContractError("unknown probe kind '" + name + "' (expected mlp or svm)");
}

Probe::Probe(ProbeKind kind, std::size_t dim, std::vector<float> mean, std::vector<float> inv_std)
    : kind_(kind), dim_(dim), mean_(std::move(mean)), inv_std_(std::move(inv_std)) {}

std::vector<float> Probe::transform(std::span<const float> x) const {
    require(x.size() == dim_, "probe: input has " + std::to_string(x.size()) + " features, expected " +
                                  std::to_string(dim_));
    std::vector<float> out(x.begin(), x.end());
    if (!mean_.empty())
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = (out[i] - mean_[i]) * inv_std_[i];
    return out;
}

double Probe::score(std::span<const float> x) const {
    const auto z = transform(x);
    if (kind_ == ProbeKind::kSvm) {
        double f = -svm_.bias;
        for (std::size_t s = 0; s < svm_.support.size(); ++s) {
            double d2 = 0.0;
            for (std::size_t i = 0; i < z.size(); ++i) {
                const double d = double(z[i]) - svm_.support[s][i];
                d2 += d * d;
            }
            f += svm_.coef[s] * std::exp(-svm_.gamma * d2);
        }
        return f;
    }
    const std::size_t h = mlp_.b1.numel();
    auto w1 = mlp_.w1.data(), b1 = mlp_.b1.data(), w2 = mlp_.w2.data();
    double logit = mlp_.b2.data()[0];
    for (std::size_t j = 0; j < h; ++j) {
        double a = b1[j];
        for (std::size_t i = 0; i < z.size(); ++i) a += double(z[i]) * w1[i * h + j];
        logit += std::max(a, 0.0) * w2[j];
    }
    return 1.0 / (1.0 + std::exp(-logit));
}

int Probe::predict(std::span<const float> x) const {
    const double s = score(x);
    return kind_ == ProbeKind::kSvm ? (s > 0.0 ? 1 : 0) : (s > 0.5 ? 1 : 0);
}

double accuracy(const Probe& probe, const HiddenDataset& h, std::span<const std::size_t> rows) {
    require(!rows.empty(), "accuracy: no rows to evaluate");
    std::size_t correct = 0;
    for (std::size_t r : rows) correct += probe.predict(h.vectors[r]) == h.labels[r];
    return static_cast<double>(correct) / static_cast<double>(rows.size());
}

namespace detail {

void check_trainable(const HiddenDataset& h) {
    require(h.size() == h.labels.size() && h.size() == h.splits.size(), "probe: dataset columns disagree");
    bool pos = false, neg = false;
    for (std::size_t i = 0; i < h.size(); ++i) {
        require(h.vectors[i].size() == h.dim, "probe: vector width differs from dataset dim");
        if (h.splits[i] != Split::kTrain) continue;
        (h.labels[i] == 1 ? pos : neg) = true;
    }
    require(pos && neg, "probe: train split must contain both classes");
}

Probe make_probe(const HiddenDataset& h, ProbeKind kind, bool standardize) {
    std::vector<float> mean, inv_std;
    if (standardize) {
        const auto rows = h.indices(Split::kTrain);
        std::vector<double> m(h.dim, 0.0), v(h.dim, 0.0);
        for (auto r : rows)
            for (std::size_t i = 0; i < h.dim; ++i) m[i] += h.vectors[r][i];
        for (auto& x : m) x /= static_cast<double>(rows.size());
        for (auto r : rows)
            for (std::size_t i = 0; i < h.dim; ++i) v[i] += std::pow(h.vectors[r][i] - m[i], 2);
        for (std::size_t i = 0; i < h.dim; ++i) {
            const double sd = std::sqrt(v[i] / static_cast<double>(rows.size()));
            mean.push_back(static_cast<float>(m[i]));
            inv_std.push_back(sd > 1e-12 ? static_cast<float>(1.0 / sd) : 1.0f);
        }
    }
    return Probe(kind, h.dim, std::move(mean), std::move(inv_std));
}

}  // namespace detail

Probe train_probe(const HiddenDataset& h, ProbeKind kind, const ProbeOptions& options) {
    return kind == ProbeKind::kMlp ? train_mlp_probe(h, options) : train_svm_probe(h, options);
}

Probe train_mlp_probe(const HiddenDataset& h, const ProbeOptions& o) {
    detail::check_trainable(h);
    require(o.hidden > 0 && o.batch_size > 0 && o.max_epochs > 0, "mlp probe: sizes must be positive");
    Probe probe = detail::make_probe(h, ProbeKind::kMlp, o.standardize);
    const std::size_t d = h.dim, hid = o.hidden;
    std::mt19937_64 rng(o.seed);
    auto& w = probe.mlp();
    w.w1 = Tensor::randn({d, hid}, rng, static_cast<float>(std::sqrt(2.0 / d)), true);
    w.b1 = Tensor::zeros({hid}, true);
    w.w2 = Tensor::randn({hid, 1}, rng, static_cast<float>(std::sqrt(1.0 / hid)), true);
    w.b2 = Tensor::zeros({1}, true);
    Adam opt({w.w1, w.b1, w.w2, w.b2}, AdamOptions{static_cast<float>(o.lr)});

    auto train = h.indices(Split::kTrain);
    auto val = h.indices(Split::kVal);
    if (val.empty()) val = train;  // tiny datasets: fall back to the train rows
    std::vector<std::vector<float>> z(h.size());
    for (std::size_t i = 0; i < h.size(); ++i) z[i] = probe.transform(h.vectors[i]);

    MlpWeights best{w.w1.clone(), w.b1.clone(), w.w2.clone(), w.b2.clone()};
    double best_acc = -1.0;
    std::size_t since_best = 0;
    for (std::size_t epoch = 0; epoch < o.max_epochs && since_best < o.patience; ++epoch) {
        std::shuffle(train.begin(), train.end(), rng);
        for (std::size_t b = 0; b < train.size(); b += o.batch_size) {
            const std::size_t m = std::min(o.batch_size, train.size() - b);
            std::vector<float> xs, ys;
            xs.reserve(m * d);
            for (std::size_t k = 0; k < m; ++k) {
                const auto r = train[b + k];
                xs.insert(xs.end(), z[r].begin(), z[r].end());
                ys.push_back(static_cast<float>(h.labels[r]));
            }
            Tensor x({m, d}, std::move(xs));
            Tensor hidden = ops::relu(ops::add_rowvec(ops::matmul(x, w.w1), w.b1));
            Tensor logits = ops::add_rowvec(ops::matmul(hidden, w.w2), w.b2);
            opt.zero_grad();
            Tensor loss = ops::bce_with_logits(logits, ys);
            loss.backward();
            opt.step();
        }
        const double acc = accuracy(probe, h, val);
        // Ties keep the newer (further trained) weights; patience only
        // resets on a strict improvement.
        if (acc >= best_acc) best = {w.w1.clone(), w.b1.clone(), w.w2.clone(), w.b2.clone()};
        if (acc > best_acc) {
            best_acc = acc;
            since_best = 0;
        } else {
            ++since_best;
        }
    }
    w = best;
    for (Tensor* t : {&w.w1, &w.b1, &w.w2, &w.b2}) t->set_requires_grad(false);
    return probe;
}

}  // namespace bkd
