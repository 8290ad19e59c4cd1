#include "bkdattr/core/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "bkdattr/core/errors.hpp"

namespace bkd::ops {

namespace {

using detail::Node;
using Backward = std::function<void(Node&)>;

Tensor make_result(Shape shape, std::vector<float> value, std::initializer_list<const Tensor*> inputs,
                   Backward backward) {
    Tensor out(std::move(shape), std::move(value));
    if (!grad_enabled()) return out;
    bool any = false;
    for (const Tensor* t : inputs) any = any || t->requires_grad();
    if (!any) return out;
    auto& node = *out.node();
    node.requires_grad = true;
    for (const Tensor* t : inputs) node.parents.push_back(t->node());
    node.backward = std::move(backward);
    return out;
}

// Parent gradient buffer, or nullptr when that parent is a constant.
std::vector<float>* grad_of(Node& self, std::size_t i) {
    Node& p = *self.parents[i];
    return p.requires_grad ? &p.grad : nullptr;
}

const std::vector<float>& value_of(Node& self, std::size_t i) { return self.parents[i]->value; }

void require_2d(const Tensor& t, const char* op) {
    if (t.ndim() != 2) throw DimensionError(std::string(op) + ": expected a 2-D tensor, got " + shape_str(t.shape()));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    }
}

template <typename F, typename G>
Tensor unary(const Tensor& a, F&& f, G&& df) {
    auto x = a.data();
    std::vector<float> y(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
    return make_result(a.shape(), std::move(y), {&a}, [df](Node& self) {
        auto* ga = grad_of(self, 0);
        if (!ga) return;
        const auto& xv = value_of(self, 0);
        for (std::size_t i = 0; i < xv.size(); ++i) (*ga)[i] += self.grad[i] * df(xv[i], self.value[i]);
    });
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_2d(a, "matmul");
    require_2d(b, "matmul");
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    if (b.rows() != k) {
        throw DimensionError("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " . " +
                             shape_str(b.shape()));
    }
    auto av = a.data();
    auto bv = b.data();
    std::vector<float> c(m * n, 0.0f);
    for (std::size_t i = 0; i < m; ++i) {
        float* ci = c.data() + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const float aip = av[i * k + p];
            const float* bp = bv.data() + p * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
        }
    }
    return make_result({m, n}, std::move(c), {&a, &b}, [m, k, n](Node& self) {
        const auto& A = value_of(self, 0);
        const auto& B = value_of(self, 1);
        const auto& G = self.grad;
        if (auto* ga = grad_of(self, 0)) {
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    float s = 0.0f;
                    for (std::size_t j = 0; j < n; ++j) s += G[i * n + j] * B[p * n + j];
                    (*ga)[i * k + p] += s;
                }
        }
        if (auto* gb = grad_of(self, 1)) {
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    const float aip = A[i * k + p];
                    float* row = gb->data() + p * n;
                    for (std::size_t j = 0; j < n; ++j) row[j] += aip * G[i * n + j];
                }
        }
    });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    require_2d(a, "matmul_nt");
    require_2d(b, "matmul_nt");
    const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
    if (b.cols() != k) {
        throw DimensionError("matmul_nt: inner dimensions disagree, " + shape_str(a.shape()) + " . " +
                             shape_str(b.shape()) + "^T");
    }
    auto av = a.data();
    auto bv = b.data();
    std::vector<float> c(m * n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            float s = 0.0f;
            for (std::size_t p = 0; p < k; ++p) s += av[i * k + p] * bv[j * k + p];
            c[i * n + j] = s;
        }
    return make_result({m, n}, std::move(c), {&a, &b}, [m, k, n](Node& self) {
        const auto& A = value_of(self, 0);
        const auto& B = value_of(self, 1);
        const auto& G = self.grad;
        auto* ga = grad_of(self, 0);
        auto* gb = grad_of(self, 1);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                const float g = G[i * n + j];
                if (g == 0.0f) continue;
                if (ga)
                    for (std::size_t p = 0; p < k; ++p) (*ga)[i * k + p] += g * B[j * k + p];
                if (gb)
                    for (std::size_t p = 0; p < k; ++p) (*gb)[j * k + p] += g * A[i * k + p];
            }
    });
}

Tensor transpose(const Tensor& a) {
    require_2d(a, "transpose");
    const std::size_t m = a.rows(), n = a.cols();
    auto av = a.data();
    std::vector<float> t(m * n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) t[j * m + i] = av[i * n + j];
    return make_result({n, m}, std::move(t), {&a}, [m, n](Node& self) {
        auto* ga = grad_of(self, 0);
        if (!ga) return;
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) (*ga)[i * n + j] += self.grad[j * m + i];
    });
}

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    auto av = a.data();
    auto bv = b.data();
    std::vector<float> c(av.size());
    for (std::size_t i = 0; i < c.size(); ++i) c[i] = av[i] + bv[i];
    return make_result(a.shape(), std::move(c), {&a, &b}, [](Node& self) {
        for (std::size_t k = 0; k < 2; ++k)
            if (auto* g = grad_of(self, k))
                for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    auto av = a.data();
    auto bv = b.data();
    std::vector<float> c(av.size());
    for (std::size_t i = 0; i < c.size(); ++i) c[i] = av[i] - bv[i];
    return make_result(a.shape(), std::move(c), {&a, &b}, [](Node& self) {
        if (auto* g = grad_of(self, 0))
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
        if (auto* g = grad_of(self, 1))
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] -= self.grad[i];
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    auto av = a.data();
    auto bv = b.data();
    std::vector<float> c(av.size());
    for (std::size_t i = 0; i < c.size(); ++i) c[i] = av[i] * bv[i];
    return make_result(a.shape(), std::move(c), {&a, &b}, [](Node& self) {
        const auto& A = value_of(self, 0);
        const auto& B = value_of(self, 1);
        if (auto* g = grad_of(self, 0))
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * B[i];
        if (auto* g = grad_of(self, 1))
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * A[i];
    });
}

Tensor scale(const Tensor& a, float s) {
    auto av = a.data();
    std::vector<float> c(av.size());
    for (std::size_t i = 0; i < c.size(); ++i) c[i] = av[i] * s;
    return make_result(a.shape(), std::move(c), {&a}, [s](Node& self) {
        if (auto* g = grad_of(self, 0))
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * s;
    });
}

Tensor add_rowvec(const Tensor& a, const Tensor& v) {
    require_2d(a, "add_rowvec");
    const std::size_t m = a.rows(), n = a.cols();
    if (v.numel() != n) {
        throw DimensionError("add_rowvec: " + shape_str(a.shape()) + " + " + shape_str(v.shape()));
    }
    auto av = a.data();
    auto vv = v.data();
    std::vector<float> c(av.size());
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) c[i * n + j] = av[i * n + j] + vv[j];
    return make_result(a.shape(), std::move(c), {&a, &v}, [m, n](Node& self) {
        if (auto* g = grad_of(self, 0))
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
        if (auto* g = grad_of(self, 1))
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) (*g)[j] += self.grad[i * n + j];
    });
}

Tensor add_n(std::span<const Tensor> terms) {
    require(!terms.empty(), "add_n: no terms");
    for (const auto& t : terms) require_same_shape(terms[0], t, "add_n");
    std::vector<float> c(terms[0].numel(), 0.0f);
    for (const auto& t : terms) {
        auto tv = t.data();
        for (std::size_t i = 0; i < c.size(); ++i) c[i] += tv[i];
    }
    Tensor out(terms[0].shape(), std::move(c));
    if (!grad_enabled()) return out;
    bool any = false;
    for (const auto& t : terms) any = any || t.requires_grad();
    if (!any) return out;
    auto& node = *out.node();
    node.requires_grad = true;
    for (const auto& t : terms) node.parents.push_back(t.node());
    node.backward = [](Node& self) {
        for (std::size_t k = 0; k < self.parents.size(); ++k)
            if (auto* g = grad_of(self, k))
                for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
    };
    return out;
}

Tensor sum(const Tensor& a) {
    double s = 0.0;
    for (float x : a.data()) s += x;
    return make_result({1}, {static_cast<float>(s)}, {&a}, [](Node& self) {
        if (auto* g = grad_of(self, 0))
            for (auto& x : *g) x += self.grad[0];
    });
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0f / static_cast<float>(a.numel())); }

Tensor relu(const Tensor& a) {
    return unary(
        a, [](float x) { return x > 0.0f ? x : 0.0f; }, [](float x, float) { return x > 0.0f ? 1.0f : 0.0f; });
}

Tensor sigmoid(const Tensor& a) {
    return unary(
        a, [](float x) { return 1.0f / (1.0f + std::exp(-x)); }, [](float, float y) { return y * (1.0f - y); });
}

Tensor tanh(const Tensor& a) {
    return unary(
        a, [](float x) { return std::tanh(x); }, [](float, float y) { return 1.0f - y * y; });
}

Tensor silu(const Tensor& a) {
    return unary(
        a, [](float x) { return x / (1.0f + std::exp(-x)); },
        [](float x, float) {
            const float s = 1.0f / (1.0f + std::exp(-x));
            return s * (1.0f + x * (1.0f - s));
        });
}

namespace {

struct AxisLayout {
    std::size_t outer = 1, len = 1, inner = 1;
};

AxisLayout axis_layout(const Shape& shape, std::size_t axis) {
    if (axis >= shape.size()) throw ContractError("softmax axis " + std::to_string(axis) + " out of range for " + shape_str(shape));
    AxisLayout l;
    for (std::size_t i = 0; i < axis; ++i) l.outer *= shape[i];
    l.len = shape[axis];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) l.inner *= shape[i];
    return l;
}

void check_nan(std::span<const float> x, const char* op) {
    for (float v : x)
        if (std::isnan(v)) throw NumericalError(std::string(op) + ": NaN in input");
}

}  // namespace

Tensor softmax(const Tensor& x, std::size_t axis) {
    const auto l = axis_layout(x.shape(), axis);
    auto xv = x.data();
    check_nan(xv, "softmax");
    std::vector<float> y(xv.size());
    for (std::size_t o = 0; o < l.outer; ++o)
        for (std::size_t in = 0; in < l.inner; ++in) {
            const std::size_t base = o * l.len * l.inner + in;
            float mx = -std::numeric_limits<float>::infinity();
            for (std::size_t t = 0; t < l.len; ++t) mx = std::max(mx, xv[base + t * l.inner]);
            float s = 0.0f;
            for (std::size_t t = 0; t < l.len; ++t) {
                const float e = std::exp(xv[base + t * l.inner] - mx);
                y[base + t * l.inner] = e;
                s += e;
            }
            for (std::size_t t = 0; t < l.len; ++t) y[base + t * l.inner] /= s;
        }
    return make_result(x.shape(), std::move(y), {&x}, [l](Node& self) {
        auto* gx = grad_of(self, 0);
        if (!gx) return;
        const auto& Y = self.value;
        const auto& G = self.grad;
        for (std::size_t o = 0; o < l.outer; ++o)
            for (std::size_t in = 0; in < l.inner; ++in) {
                const std::size_t base = o * l.len * l.inner + in;
                float dot = 0.0f;
                for (std::size_t t = 0; t < l.len; ++t) dot += G[base + t * l.inner] * Y[base + t * l.inner];
                for (std::size_t t = 0; t < l.len; ++t) {
                    const std::size_t i = base + t * l.inner;
                    (*gx)[i] += Y[i] * (G[i] - dot);
                }
            }
    });
}

Tensor log_softmax(const Tensor& x, std::size_t axis) {
    const auto l = axis_layout(x.shape(), axis);
    auto xv = x.data();
    check_nan(xv, "log_softmax");
    std::vector<float> y(xv.size());
    for (std::size_t o = 0; o < l.outer; ++o)
        for (std::size_t in = 0; in < l.inner; ++in) {
            const std::size_t base = o * l.len * l.inner + in;
            float mx = -std::numeric_limits<float>::infinity();
            for (std::size_t t = 0; t < l.len; ++t) mx = std::max(mx, xv[base + t * l.inner]);
            double s = 0.0;
            for (std::size_t t = 0; t < l.len; ++t) s += std::exp(double(xv[base + t * l.inner] - mx));
            const float lse = mx + static_cast<float>(std::log(s));
            for (std::size_t t = 0; t < l.len; ++t) y[base + t * l.inner] = xv[base + t * l.inner] - lse;
        }
    return make_result(x.shape(), std::move(y), {&x}, [l](Node& self) {
        auto* gx = grad_of(self, 0);
        if (!gx) return;
        const auto& Y = self.value;
        const auto& G = self.grad;
        for (std::size_t o = 0; o < l.outer; ++o)
            for (std::size_t in = 0; in < l.inner; ++in) {
                const std::size_t base = o * l.len * l.inner + in;
                float gs = 0.0f;
                for (std::size_t t = 0; t < l.len; ++t) gs += G[base + t * l.inner];
                for (std::size_t t = 0; t < l.len; ++t) {
                    const std::size_t i = base + t * l.inner;
                    (*gx)[i] += G[i] - std::exp(Y[i]) * gs;
                }
            }
    });
}

Tensor causal_softmax(const Tensor& scores) {
    require_2d(scores, "causal_softmax");
    const std::size_t t = scores.rows(), s = scores.cols();
    if (s < t) throw DimensionError("causal_softmax: needs cols >= rows, got " + shape_str(scores.shape()));
    const std::size_t shift = s - t;
    auto xv = scores.data();
    check_nan(xv, "causal_softmax");
    std::vector<float> y(xv.size(), 0.0f);
    for (std::size_t i = 0; i < t; ++i) {
        const std::size_t visible = i + shift + 1;
        const float* xi = xv.data() + i * s;
        float* yi = y.data() + i * s;
        float mx = -std::numeric_limits<float>::infinity();
        for (std::size_t j = 0; j < visible; ++j) mx = std::max(mx, xi[j]);
        float total = 0.0f;
        for (std::size_t j = 0; j < visible; ++j) {
            yi[j] = std::exp(xi[j] - mx);
            total += yi[j];
        }
        for (std::size_t j = 0; j < visible; ++j) yi[j] /= total;
    }
    return make_result(scores.shape(), std::move(y), {&scores}, [t, s, shift](Node& self) {
        auto* gx = grad_of(self, 0);
        if (!gx) return;
        const auto& Y = self.value;
        const auto& G = self.grad;
        for (std::size_t i = 0; i < t; ++i) {
            const std::size_t visible = i + shift + 1;
            float dot = 0.0f;
            for (std::size_t j = 0; j < visible; ++j) dot += G[i * s + j] * Y[i * s + j];
            for (std::size_t j = 0; j < visible; ++j) (*gx)[i * s + j] += Y[i * s + j] * (G[i * s + j] - dot);
        }
    });
}

Tensor rms_norm(const Tensor& x, const Tensor& weight, float eps) {
    require_2d(x, "rms_norm");
    const std::size_t m = x.rows(), d = x.cols();
    if (weight.numel() != d) {
        throw DimensionError("rms_norm: input " + shape_str(x.shape()) + " vs weight " + shape_str(weight.shape()));
    }
    auto xv = x.data();
    auto wv = weight.data();
    std::vector<float> y(xv.size());
    std::vector<float> inv(m);
    for (std::size_t i = 0; i < m; ++i) {
        float ss = 0.0f;
        for (std::size_t j = 0; j < d; ++j) ss += xv[i * d + j] * xv[i * d + j];
        inv[i] = 1.0f / std::sqrt(ss / static_cast<float>(d) + eps);
        for (std::size_t j = 0; j < d; ++j) y[i * d + j] = xv[i * d + j] * inv[i] * wv[j];
    }
    return make_result(x.shape(), std::move(y), {&x, &weight}, [m, d, inv = std::move(inv)](Node& self) {
        const auto& X = value_of(self, 0);
        const auto& W = value_of(self, 1);
        const auto& G = self.grad;
        auto* gx = grad_of(self, 0);
        auto* gw = grad_of(self, 1);
        for (std::size_t i = 0; i < m; ++i) {
            const float r = inv[i];
            if (gw)
                for (std::size_t j = 0; j < d; ++j) (*gw)[j] += G[i * d + j] * X[i * d + j] * r;
            if (gx) {
                float dot = 0.0f;
                for (std::size_t j = 0; j < d; ++j) dot += G[i * d + j] * W[j] * X[i * d + j];
                const float c = r * r * r * dot / static_cast<float>(d);
                for (std::size_t j = 0; j < d; ++j)
                    (*gx)[i * d + j] += r * G[i * d + j] * W[j] - c * X[i * d + j];
            }
        }
    });
}

Tensor rope(const Tensor& x, std::size_t head_dim, std::size_t offset, float base) {
    require_2d(x, "rope");
    const std::size_t m = x.rows(), d = x.cols();
    require(head_dim > 0 && head_dim % 2 == 0 && d % head_dim == 0,
            "rope: head_dim must be even and divide the width " + std::to_string(d));
    const std::size_t half = head_dim / 2;
    std::vector<float> cs(m * half), sn(m * half);
    for (std::size_t t = 0; t < m; ++t)
        for (std::size_t i = 0; i < half; ++i) {
            const double theta = static_cast<double>(offset + t) *
                                 std::pow(static_cast<double>(base), -2.0 * static_cast<double>(i) / head_dim);
            cs[t * half + i] = static_cast<float>(std::cos(theta));
            sn[t * half + i] = static_cast<float>(std::sin(theta));
        }
    auto xv = x.data();
    std::vector<float> y(xv.size());
    for (std::size_t t = 0; t < m; ++t)
        for (std::size_t h = 0; h < d; h += head_dim)
            for (std::size_t i = 0; i < half; ++i) {
                const std::size_t k = t * d + h + 2 * i;
                const float c = cs[t * half + i], s = sn[t * half + i];
                y[k] = xv[k] * c - xv[k + 1] * s;
                y[k + 1] = xv[k] * s + xv[k + 1] * c;
            }
    return make_result(x.shape(), std::move(y), {&x},
                       [m, d, head_dim, half, cs = std::move(cs), sn = std::move(sn)](Node& self) {
                           auto* gx = grad_of(self, 0);
                           if (!gx) return;
                           const auto& G = self.grad;
                           for (std::size_t t = 0; t < m; ++t)
                               for (std::size_t h = 0; h < d; h += head_dim)
                                   for (std::size_t i = 0; i < half; ++i) {
                                       const std::size_t k = t * d + h + 2 * i;
                                       const float c = cs[t * half + i], s = sn[t * half + i];
                                       (*gx)[k] += G[k] * c + G[k + 1] * s;
                                       (*gx)[k + 1] += -G[k] * s + G[k + 1] * c;
                                   }
                       });
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count) {
    require_2d(x, "slice_rows");
    const std::size_t n = x.cols();
    require(count > 0 && begin + count <= x.rows(), "slice_rows: range out of bounds for " + shape_str(x.shape()));
    auto xv = x.data();
    std::vector<float> y(xv.begin() + begin * n, xv.begin() + (begin + count) * n);
    return make_result({count, n}, std::move(y), {&x}, [begin, n](Node& self) {
        if (auto* g = grad_of(self, 0))
            for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[begin * n + i] += self.grad[i];
    });
}

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t count) {
    require_2d(x, "slice_cols");
    const std::size_t m = x.rows(), n = x.cols();
    require(count > 0 && begin + count <= n, "slice_cols: range out of bounds for " + shape_str(x.shape()));
    auto xv = x.data();
    std::vector<float> y(m * count);
    for (std::size_t i = 0; i < m; ++i)
        std::copy_n(xv.begin() + i * n + begin, count, y.begin() + i * count);
    return make_result({m, count}, std::move(y), {&x}, [m, n, begin, count](Node& self) {
        if (auto* g = grad_of(self, 0))
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < count; ++j) (*g)[i * n + begin + j] += self.grad[i * count + j];
    });
}

Tensor concat_cols(std::span<const Tensor> parts) {
    require(!parts.empty(), "concat_cols: no parts");
    const std::size_t m = parts[0].rows();
    std::size_t n = 0;
    std::vector<std::size_t> widths;
    for (const auto& p : parts) {
        if (p.rows() != m) {
            throw DimensionError("concat_cols: row mismatch " + shape_str(parts[0].shape()) + " vs " +
                                 shape_str(p.shape()));
        }
        widths.push_back(p.cols());
        n += p.cols();
    }
    std::vector<float> y(m * n);
    std::size_t off = 0;
    for (const auto& p : parts) {
        auto pv = p.data();
        const std::size_t w = p.cols();
        for (std::size_t i = 0; i < m; ++i) std::copy_n(pv.begin() + i * w, w, y.begin() + i * n + off);
        off += w;
    }
    Tensor out({m, n}, std::move(y));
    if (!grad_enabled()) return out;
    bool any = false;
    for (const auto& p : parts) any = any || p.requires_grad();
    if (!any) return out;
    auto& node = *out.node();
    node.requires_grad = true;
    for (const auto& p : parts) node.parents.push_back(p.node());
    node.backward = [m, n, widths](Node& self) {
        std::size_t off = 0;
        for (std::size_t k = 0; k < widths.size(); ++k) {
            const std::size_t w = widths[k];
            if (auto* g = grad_of(self, k))
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < w; ++j) (*g)[i * w + j] += self.grad[i * n + off + j];
            off += w;
        }
    };
    return out;
}

Tensor embedding(const Tensor& table, std::span<const int32_t> ids) {
    require_2d(table, "embedding");
    require(!ids.empty(), "embedding: empty id sequence");
    const std::size_t v = table.rows(), d = table.cols();
    auto tv = table.data();
    std::vector<float> y(ids.size() * d);
    std::vector<int32_t> idx(ids.begin(), ids.end());
    for (std::size_t t = 0; t < idx.size(); ++t) {
        require(idx[t] >= 0 && static_cast<std::size_t>(idx[t]) < v,
                "embedding: token id " + std::to_string(idx[t]) + " out of range [0, " + std::to_string(v) + ")");
        std::copy_n(tv.begin() + idx[t] * d, d, y.begin() + t * d);
    }
    const std::size_t n = idx.size();
    return make_result({n, d}, std::move(y), {&table}, [d, idx = std::move(idx)](Node& self) {
        if (auto* g = grad_of(self, 0))
            for (std::size_t t = 0; t < idx.size(); ++t)
                for (std::size_t j = 0; j < d; ++j) (*g)[idx[t] * d + j] += self.grad[t * d + j];
    });
}

Tensor replace_row(const Tensor& x, std::size_t r, const Tensor& value) {
    require_2d(x, "replace_row");
    const std::size_t n = x.cols();
    require(r < x.rows(), "replace_row: row " + std::to_string(r) + " out of range for " + shape_str(x.shape()));
    if (value.numel() != n) {
        throw DimensionError("replace_row: row width " + std::to_string(n) + " vs value " + shape_str(value.shape()));
    }
    std::vector<float> y = x.to_vector();
    auto vv = value.data();
    std::copy(vv.begin(), vv.end(), y.begin() + r * n);
    return make_result(x.shape(), std::move(y), {&x, &value}, [r, n](Node& self) {
        if (auto* g = grad_of(self, 0))
            for (std::size_t i = 0; i < g->size(); ++i)
                if (i / n != r) (*g)[i] += self.grad[i];
        if (auto* g = grad_of(self, 1))
            for (std::size_t j = 0; j < n; ++j) (*g)[j] += self.grad[r * n + j];
    });
}

Tensor add_to_row(const Tensor& x, std::size_t r, const Tensor& value, float coeff) {
    require_2d(x, "add_to_row");
    const std::size_t n = x.cols();
    require(r < x.rows(), "add_to_row: row " + std::to_string(r) + " out of range for " + shape_str(x.shape()));
    if (value.numel() != n) {
        throw DimensionError("add_to_row: row width " + std::to_string(n) + " vs value " + shape_str(value.shape()));
    }
    std::vector<float> y = x.to_vector();
    auto vv = value.data();
    for (std::size_t j = 0; j < n; ++j) y[r * n + j] += coeff * vv[j];
    return make_result(x.shape(), std::move(y), {&x, &value}, [r, n, coeff](Node& self) {
        if (auto* g = grad_of(self, 0))
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
        if (auto* g = grad_of(self, 1))
            for (std::size_t j = 0; j < n; ++j) (*g)[j] += coeff * self.grad[r * n + j];
    });
}

Tensor cross_entropy_sum(const Tensor& logits, std::span<const int32_t> targets) {
    require_2d(logits, "cross_entropy_sum");
    const std::size_t m = logits.rows(), v = logits.cols();
    if (targets.size() != m) {
        throw DimensionError("cross_entropy_sum: " + std::to_string(targets.size()) + " targets for logits " +
                             shape_str(logits.shape()));
    }
    auto xv = logits.data();
    check_nan(xv, "cross_entropy_sum");
    std::vector<int32_t> tg(targets.begin(), targets.end());
    std::vector<float> probs(m * v, 0.0f);
    double loss = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        if (tg[i] < 0) continue;
        require(static_cast<std::size_t>(tg[i]) < v, "cross_entropy_sum: target id out of range");
        const float* row = xv.data() + i * v;
        const float mx = *std::max_element(row, row + v);
        double s = 0.0;
        for (std::size_t j = 0; j < v; ++j) {
            const double e = std::exp(double(row[j] - mx));
            probs[i * v + j] = static_cast<float>(e);
            s += e;
        }
        for (std::size_t j = 0; j < v; ++j) probs[i * v + j] = static_cast<float>(probs[i * v + j] / s);
        loss += (mx + std::log(s)) - row[tg[i]];
    }
    return make_result({1}, {static_cast<float>(loss)}, {&logits},
                       [m, v, tg = std::move(tg), probs = std::move(probs)](Node& self) {
                           auto* g = grad_of(self, 0);
                           if (!g) return;
                           const float up = self.grad[0];
                           for (std::size_t i = 0; i < m; ++i) {
                               if (tg[i] < 0) continue;
                               for (std::size_t j = 0; j < v; ++j) (*g)[i * v + j] += up * probs[i * v + j];
                               (*g)[i * v + tg[i]] -= up;
                           }
                       });
}

Tensor bce_with_logits(const Tensor& logits, std::span<const float> targets) {
    const std::size_t n = logits.numel();
    if (targets.size() != n) {
        throw DimensionError("bce_with_logits: " + std::to_string(targets.size()) + " targets for logits " +
                             shape_str(logits.shape()));
    }
    auto zv = logits.data();
    std::vector<float> y(targets.begin(), targets.end());
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double z = zv[i];
        loss += std::max(z, 0.0) - z * y[i] + std::log1p(std::exp(-std::abs(z)));
    }
    loss /= static_cast<double>(n);
    return make_result({1}, {static_cast<float>(loss)}, {&logits}, [n, y = std::move(y)](Node& self) {
        auto* g = grad_of(self, 0);
        if (!g) return;
        const auto& Z = value_of(self, 0);
        const float up = self.grad[0] / static_cast<float>(n);
        for (std::size_t i = 0; i < n; ++i) (*g)[i] += up * (1.0f / (1.0f + std::exp(-Z[i])) - y[i]);
    });
}

Tensor dropout(const Tensor& x, float rate, std::mt19937_64& rng) {
    require(rate >= 0.0f && rate < 1.0f, "dropout: rate must be in [0, 1)");
    if (rate == 0.0f) return x;
    std::bernoulli_distribution keep(1.0 - rate);
    const float s = 1.0f / (1.0f - rate);
    std::vector<float> mask(x.numel());
    for (auto& m : mask) m = keep(rng) ? s : 0.0f;
    return mul(x, Tensor(x.shape(), std::move(mask)));
}

}  // namespace bkd::ops
