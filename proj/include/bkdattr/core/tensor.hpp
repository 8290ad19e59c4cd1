#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace bkd {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

namespace detail {

// One vertex of the autograd graph. Interior nodes hold their parents and a
// closure that pushes `grad` into them; both are released once backward runs.
struct Node {
    Shape shape;
    std::vector<float> value;
    std::vector<float> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;

    std::vector<float>& ensure_grad() {
        if (grad.empty()) grad.assign(value.size(), 0.0f);
        return grad;
    }
};

}  // namespace detail

// Dense row-major fp32 tensor with reverse-mode gradient support.
//
// Copies share storage; use clone() for an independent value. Values produced
// by ops are never mutated afterwards, only parameters are updated in place
// (by the optimizer or weight surgery) through mutable_data().
class Tensor {
   public:
    Tensor() = default;
    Tensor(Shape shape, std::vector<float> values, bool requires_grad = false);

    static Tensor zeros(const Shape& shape, bool requires_grad = false);
    static Tensor full(const Shape& shape, float value, bool requires_grad = false);
    static Tensor randn(const Shape& shape, std::mt19937_64& rng, float stddev = 1.0f,
                        bool requires_grad = false);
    static Tensor scalar(float value, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    std::size_t ndim() const { return shape().size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t numel() const;
    std::size_t rows() const;  // 2-D only
    std::size_t cols() const;  // 2-D only

    std::span<const float> data() const;
    std::span<float> mutable_data();
    std::vector<float> to_vector() const;
    float item() const;
    float at(std::size_t r, std::size_t c) const;
    std::span<const float> row(std::size_t r) const;

    bool requires_grad() const;
    void set_requires_grad(bool on);
    bool has_grad() const;
    std::span<const float> grad() const;
    void zero_grad();

    // Deep copy of the value only; the result is a graph leaf.
    Tensor clone() const;
    // Same storage semantics as clone() but never tracks gradients.
    Tensor detach() const { return clone(); }

    // Reverse-mode sweep from a scalar. Gradients accumulate into every leaf
    // that requires them; interior graph state is discarded afterwards.
    void backward();

    // Identity of the underlying storage (for parameter bookkeeping).
    const void* id() const { return node_.get(); }

    // Op plumbing.
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
    const std::shared_ptr<detail::Node>& node() const { return node_; }

   private:
    std::shared_ptr<detail::Node> node_;
};

// Gradient recording is on by default; a guard disables it on this thread.
bool grad_enabled();

class NoGradGuard {
   public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

   private:
    bool previous_;
};

}  // namespace bkd
