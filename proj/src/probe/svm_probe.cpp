#include <algorithm>
#include <cmath>
#include <limits>

#include "bkdattr/core/errors.hpp"
#include "bkdattr/probe/probe.hpp"
#include "probe_internal.hpp"

namespace bkd {

// Soft-margin RBF SVM trained by SMO with maximal-violating-pair working set
// selection, on the dual min 0.5 a^T Q a - e^T a, 0 <= a <= C, y^T a = 0.
Probe train_svm_probe(const HiddenDataset& h, const ProbeOptions& o) {
    require(o.C > 0.0 && o.tolerance > 0.0, "svm probe: C and tolerance must be positive");
    detail::check_trainable(h);
    Probe probe = detail::make_probe(h, ProbeKind::kSvm, o.standardize);

    const auto rows = h.indices(Split::kTrain);
    const std::size_t n = rows.size();
    std::vector<std::vector<float>> x(n);
    std::vector<double> y(n);
    for (std::size_t k = 0; k < n; ++k) {
        x[k] = probe.transform(h.vectors[rows[k]]);
        y[k] = h.labels[rows[k]] == 1 ? 1.0 : -1.0;
    }

    // gamma = 1 / (d * variance of all training features).
    double sum = 0.0, sq = 0.0;
    for (const auto& v : x)
        for (float f : v) {
            sum += f;
            sq += double(f) * f;
        }
    const double cnt = static_cast<double>(n * h.dim);
    const double var = sq / cnt - (sum / cnt) * (sum / cnt);
    const double gamma = var > 0.0 ? 1.0 / (static_cast<double>(h.dim) * var) : 1.0;

    std::vector<double> K(n * n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i; j < n; ++j) {
            double d2 = 0.0;
            for (std::size_t f = 0; f < h.dim; ++f) {
                const double d = double(x[i][f]) - x[j][f];
                d2 += d * d;
            }
            K[i * n + j] = K[j * n + i] = std::exp(-gamma * d2);
        }
    auto Q = [&](std::size_t i, std::size_t j) { return y[i] * y[j] * K[i * n + j]; };

    const double C = o.C;
    std::vector<double> alpha(n, 0.0), G(n, -1.0);
    constexpr double kTau = 1e-12;
    for (std::size_t iter = 0; iter < o.max_iterations; ++iter) {
        double gmax = -std::numeric_limits<double>::infinity(), gmin = std::numeric_limits<double>::infinity();
        std::size_t i = n, j = n;
        for (std::size_t t = 0; t < n; ++t) {
            const double v = -y[t] * G[t];
            const bool up = (y[t] > 0 && alpha[t] < C) || (y[t] < 0 && alpha[t] > 0);
            const bool low = (y[t] > 0 && alpha[t] > 0) || (y[t] < 0 && alpha[t] < C);
            if (up && v > gmax) gmax = v, i = t;
            if (low && v < gmin) gmin = v, j = t;
        }
        if (i == n || j == n || gmax - gmin < o.tolerance) break;

        const double ai = alpha[i], aj = alpha[j];
        if (y[i] != y[j]) {
            const double quad = std::max(Q(i, i) + Q(j, j) + 2.0 * Q(i, j), kTau);
            const double delta = (-G[i] - G[j]) / quad;
            const double diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if (diff > 0) {
                if (alpha[j] < 0) alpha[j] = 0, alpha[i] = diff;
            } else if (alpha[i] < 0) {
                alpha[i] = 0, alpha[j] = -diff;
            }
            if (diff > 0) {
                if (alpha[i] > C) alpha[i] = C, alpha[j] = C - diff;
            } else if (alpha[j] > C) {
                alpha[j] = C, alpha[i] = C + diff;
            }
        } else {
            const double quad = std::max(Q(i, i) + Q(j, j) - 2.0 * Q(i, j), kTau);
            const double delta = (G[i] - G[j]) / quad;
            const double total = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if (total > C) {
                if (alpha[i] > C) alpha[i] = C, alpha[j] = total - C;
            } else if (alpha[j] < 0) {
                alpha[j] = 0, alpha[i] = total;
            }
            if (total > C) {
                if (alpha[j] > C) alpha[j] = C, alpha[i] = total - C;
            } else if (alpha[i] < 0) {
                alpha[i] = 0, alpha[j] = total;
            }
        }
        const double di = alpha[i] - ai, dj = alpha[j] - aj;
        for (std::size_t t = 0; t < n; ++t) G[t] += Q(i, t) * di + Q(j, t) * dj;
    }

    // Bias from free support vectors, else the midpoint of the feasible range.
    double ub = std::numeric_limits<double>::infinity(), lb = -ub, free_sum = 0.0;
    std::size_t n_free = 0;
    for (std::size_t t = 0; t < n; ++t) {
        const double yg = y[t] * G[t];
        if (alpha[t] >= C) {
            if (y[t] < 0) ub = std::min(ub, yg); else lb = std::max(lb, yg);
        } else if (alpha[t] <= 0) {
            if (y[t] > 0) ub = std::min(ub, yg); else lb = std::max(lb, yg);
        } else {
            ++n_free;
            free_sum += yg;
        }
    }
    auto& m = probe.svm();
    m.bias = n_free > 0 ? free_sum / static_cast<double>(n_free) : (ub + lb) / 2.0;
    m.gamma = gamma;
    for (std::size_t t = 0; t < n; ++t) {
        if (alpha[t] <= 0) continue;
        m.support.push_back(x[t]);
        m.coef.push_back(alpha[t] * y[t]);
    }
    return probe;
}

}  // namespace bkd
