#include "bkdattr/core/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

#include "bkdattr/core/errors.hpp"

namespace bkd {

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << " x ";
        os << shape[i];
    }
    os << ']';
    return os.str();
}

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

Tensor::Tensor(Shape shape, std::vector<float> values, bool requires_grad) {
    for (auto d : shape) require(d > 0, "tensor dimensions must be positive, got " + shape_str(shape));
    if (shape_numel(shape) != values.size()) {
        throw DimensionError("shape " + shape_str(shape) + " needs " + std::to_string(shape_numel(shape)) +
                             " values, got " + std::to_string(values.size()));
    }
    node_ = std::make_shared<detail::Node>();
    node_->shape = std::move(shape);
    node_->value = std::move(values);
    node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
    return Tensor(shape, std::vector<float>(shape_numel(shape), 0.0f), requires_grad);
}

Tensor Tensor::full(const Shape& shape, float value, bool requires_grad) {
    return Tensor(shape, std::vector<float>(shape_numel(shape), value), requires_grad);
}

Tensor Tensor::randn(const Shape& shape, std::mt19937_64& rng, float stddev, bool requires_grad) {
    std::normal_distribution<float> dist(0.0f, stddev);
    std::vector<float> v(shape_numel(shape));
    for (auto& x : v) x = dist(rng);
    return Tensor(shape, std::move(v), requires_grad);
}

Tensor Tensor::scalar(float value, bool requires_grad) { return Tensor({1}, {value}, requires_grad); }

const Shape& Tensor::shape() const {
    require(defined(), "use of undefined tensor");
    return node_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
    require(axis < ndim(), "axis out of range for shape " + shape_str(shape()));
    return node_->shape[axis];
}

std::size_t Tensor::numel() const { return node_ ? node_->value.size() : 0; }

std::size_t Tensor::rows() const {
    require(ndim() == 2, "rows() needs a 2-D tensor, got " + shape_str(shape()));
    return node_->shape[0];
}

std::size_t Tensor::cols() const {
    require(ndim() == 2, "cols() needs a 2-D tensor, got " + shape_str(shape()));
    return node_->shape[1];
}

std::span<const float> Tensor::data() const {
    require(defined(), "use of undefined tensor");
    return node_->value;
}

std::span<float> Tensor::mutable_data() {
    require(defined(), "use of undefined tensor");
    return node_->value;
}

std::vector<float> Tensor::to_vector() const {
    auto d = data();
    return {d.begin(), d.end()};
}

float Tensor::item() const {
    require(numel() == 1, "item() needs a single-element tensor, got " + shape_str(shape()));
    return node_->value[0];
}

float Tensor::at(std::size_t r, std::size_t c) const {
    require(r < rows() && c < cols(), "index out of range");
    return node_->value[r * cols() + c];
}

std::span<const float> Tensor::row(std::size_t r) const {
    require(r < rows(), "row index out of range");
    return data().subspan(r * cols(), cols());
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

void Tensor::set_requires_grad(bool on) {
    require(defined(), "use of undefined tensor");
    require(node_->parents.empty(), "requires_grad can only be toggled on graph leaves");
    node_->requires_grad = on;
    if (!on) node_->grad.clear();
}

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

std::span<const float> Tensor::grad() const {
    require(defined(), "use of undefined tensor");
    return node_->grad;
}

void Tensor::zero_grad() {
    if (node_ && !node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0f);
}

Tensor Tensor::clone() const {
    require(defined(), "use of undefined tensor");
    return Tensor(node_->shape, node_->value, false);
}

void Tensor::backward() {
    require(defined(), "backward on undefined tensor");
    if (numel() != 1) {
        throw ContractError("backward() needs a scalar loss, got shape " + shape_str(shape()));
    }
    if (!node_->requires_grad) return;  // constant loss: nothing reachable

    // Iterative post-order DFS gives a topological order of the recorded graph.
    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> seen;
    std::vector<std::pair<detail::Node*, std::size_t>> stack{{node_.get(), 0}};
    seen.insert(node_.get());
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->parents.size()) {
            detail::Node* p = n->parents[next++].get();
            if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }

    node_->ensure_grad()[0] += 1.0f;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::Node* n = *it;
        if (n->backward) {
            for (auto& p : n->parents) {
                if (p->requires_grad) p->ensure_grad();
            }
            n->backward(*n);
        }
    }
    // Drop the tape: interior nodes lose their closures, parents and grads.
    for (detail::Node* n : order) {
        if (n->backward) {
            n->backward = nullptr;
            n->parents.clear();
            n->grad.clear();
            n->grad.shrink_to_fit();
        }
    }
}

}  // namespace bkd
