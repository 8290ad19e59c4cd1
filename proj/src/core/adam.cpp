#include "bkdattr/core/adam.hpp"

#include <cmath>

#include "bkdattr/core/errors.hpp"

namespace bkd {

Adam::Adam(std::vector<Tensor> params, AdamOptions options) : params_(std::move(params)), options_(options) {
    require(options_.lr > 0.0f, "Adam: learning rate must be positive");
    for (const auto& p : params_) {
        require(p.defined(), "Adam: undefined parameter");
        m_.emplace_back(p.numel(), 0.0f);
        v_.emplace_back(p.numel(), 0.0f);
    }
}

void Adam::step() {
    for (std::size_t i = 0; i < params_.size(); ++i) {
        if (!params_[i].has_grad()) {
            throw ContractError("Adam::step: parameter " + std::to_string(i) + " " + shape_str(params_[i].shape()) +
                                " has no gradient");
        }
    }
    ++step_;
    const double bc1 = 1.0 - std::pow(static_cast<double>(options_.beta1), static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(static_cast<double>(options_.beta2), static_cast<double>(step_));
    const float b1 = options_.beta1, b2 = options_.beta2;
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto w = params_[i].mutable_data();
        auto g = params_[i].grad();
        auto& m = m_[i];
        auto& v = v_[i];
        for (std::size_t j = 0; j < w.size(); ++j) {
            m[j] = b1 * m[j] + (1.0f - b1) * g[j];
            v[j] = b2 * v[j] + (1.0f - b2) * g[j] * g[j];
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            w[j] -= static_cast<float>(options_.lr * mhat / (std::sqrt(vhat) + options_.eps));
        }
    }
}

void Adam::zero_grad() {
    for (auto& p : params_) p.zero_grad();
}

}  // namespace bkd
