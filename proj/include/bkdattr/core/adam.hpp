#pragma once

#include <cstdint>
#include <vector>

#include "bkdattr/core/tensor.hpp"

namespace bkd {

struct AdamOptions {
    float lr = 1e-3f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
};

// Bias-corrected Adam over a fixed parameter list.
class Adam {
   public:
    Adam(std::vector<Tensor> params, AdamOptions options = {});

    // One update using each parameter's current grad. Throws ContractError if
    // any parameter has no populated gradient.
    void step();
    void zero_grad();

    void set_lr(float lr) { options_.lr = lr; }
    float lr() const { return options_.lr; }
    std::int64_t steps() const { return step_; }
    const std::vector<Tensor>& params() const { return params_; }
    const std::vector<std::vector<float>>& first_moment() const { return m_; }
    const std::vector<std::vector<float>>& second_moment() const { return v_; }

   private:
    std::vector<Tensor> params_;
    AdamOptions options_;
    std::int64_t step_ = 0;
    std::vector<std::vector<float>> m_;
    std::vector<std::vector<float>> v_;
};

}  // namespace bkd
