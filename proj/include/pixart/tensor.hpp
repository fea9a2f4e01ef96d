#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "pixart/errors.hpp"
#include "pixart/rng.hpp"

// Dense row-major tensors with reverse-mode differentiation. Each op records
// its inputs and a local gradient rule on the output node; backward() walks
// the reachable nodes once, in reverse creation order, accumulating grads
// additively into every requires_grad leaf. Computation is double precision
// throughout. No views, no aliasing: reshape copies metadata, data is shared
// only through whole-tensor handles.

namespace pixart {

using real = double;
using Shape = std::vector<int>;

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

inline size_t shape_numel(const Shape& s) {
    size_t n = 1;
    for (int d : s) {
        if (d <= 0) throw ShapeError("non-positive dimension in shape " + shape_str(s));
        n *= static_cast<size_t>(d);
    }
    return n;
}

class Tensor;

namespace detail {

inline std::atomic<uint64_t>& node_counter() {
    static std::atomic<uint64_t> counter{0};
    return counter;
}

struct Node {
    Shape shape;
    std::vector<real> data;
    bool requires_grad = false;
    std::vector<real> grad;  // empty until backward touches this node
    uint64_t id = 0;         // insertion order, used for reverse traversal
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backprop;  // pushes node.grad into parents

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    }
};

}  // namespace detail

class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        std::vector<real> d(shape_numel(shape), 0.0);
        return from(std::move(shape), std::move(d), requires_grad);
    }

    static Tensor full(Shape shape, real value, bool requires_grad = false) {
        std::vector<real> d(shape_numel(shape), value);
        return from(std::move(shape), std::move(d), requires_grad);
    }

    static Tensor from(Shape shape, std::vector<real> data, bool requires_grad = false) {
        if (shape_numel(shape) != data.size())
            throw ShapeError("data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
        Tensor t;
        t.n_ = std::make_shared<detail::Node>();
        t.n_->shape = std::move(shape);
        t.n_->data = std::move(data);
        t.n_->requires_grad = requires_grad;
        t.n_->id = detail::node_counter()++;
        return t;
    }

    static Tensor scalar(real v) { return from({}, {v}); }

    static Tensor randn(Shape shape, Rng& rng, real stddev = 1.0, bool requires_grad = false) {
        std::vector<real> d(shape_numel(shape));
        for (real& x : d) x = rng.normal() * stddev;
        return from(std::move(shape), std::move(d), requires_grad);
    }

    bool defined() const { return static_cast<bool>(n_); }
    const Shape& shape() const { return n_->shape; }
    int ndim() const { return static_cast<int>(n_->shape.size()); }
    int dim(int i) const { return n_->shape.at(static_cast<size_t>(i)); }
    size_t numel() const { return n_->data.size(); }
    bool requires_grad() const { return n_->requires_grad; }

    const std::vector<real>& data() const { return n_->data; }
    // Leaf mutation hook for optimizers and finite differencing. Mutating a
    // non-leaf that still participates in a live graph is caller error.
    std::vector<real>& mutable_data() { return n_->data; }

    const std::vector<real>& grad() const {
        n_->ensure_grad();
        return n_->grad;
    }
    void zero_grad() { n_->grad.assign(n_->data.size(), 0.0); }
    bool has_grad() const { return !n_->grad.empty(); }

    real item() const {
        if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
        return n_->data[0];
    }

    uint64_t node_id() const { return n_->id; }
    std::shared_ptr<detail::Node> node() const { return n_; }

    // Detached copy: same data, fresh leaf, no history.
    Tensor detach(bool requires_grad = false) const {
        return from(n_->shape, n_->data, requires_grad);
    }

private:
    std::shared_ptr<detail::Node> n_;

    friend Tensor op_result(Shape shape, std::vector<real> data, std::vector<Tensor> parents,
                            std::function<void(detail::Node&)> backprop, const char* op_name);
};

// ---------------------------------------------------------------------------
// op plumbing

inline void check_finite(const std::vector<real>& v, const char* op_name) {
    for (real x : v) {
        if (!std::isfinite(x))
            throw NumericError(std::string("non-finite value produced by ") + op_name);
    }
}

inline Tensor op_result(Shape shape, std::vector<real> data, std::vector<Tensor> parents,
                        std::function<void(detail::Node&)> backprop, const char* op_name) {
    check_finite(data, op_name);
    Tensor t = Tensor::from(std::move(shape), std::move(data));
    bool any_grad = false;
    for (const Tensor& p : parents) any_grad = any_grad || p.requires_grad();
    t.n_->requires_grad = any_grad;
    if (any_grad) {
        t.n_->parents.reserve(parents.size());
        for (const Tensor& p : parents) t.n_->parents.push_back(p.node());
        t.n_->backprop = std::move(backprop);
    }
    return t;
}

namespace detail {
inline void accumulate(Node& parent, size_t idx, real v) {
    parent.ensure_grad();
    parent.grad[idx] += v;
}
}  // namespace detail

// ---------------------------------------------------------------------------
// shape helpers

inline void require_2d(const Tensor& t, const char* op_name) {
    if (t.ndim() != 2)
        throw ShapeError(std::string(op_name) + " expects a 2-d tensor, got " + shape_str(t.shape()));
}

// Broadcast classification for binary elementwise ops: identical shapes,
// a trailing-axis vector over the rows of a 2-d tensor, or a scalar.
enum class Broadcast { same, row_vector, scalar_rhs };

inline Broadcast classify_broadcast(const Tensor& a, const Tensor& b, const char* op_name) {
    if (a.shape() == b.shape()) return Broadcast::same;
    if (b.numel() == 1) return Broadcast::scalar_rhs;
    if (b.ndim() == 1 && a.ndim() >= 1 && a.dim(a.ndim() - 1) == b.dim(0))
        return Broadcast::row_vector;
    throw ShapeError(std::string(op_name) + ": incompatible shapes " + shape_str(a.shape()) +
                     " and " + shape_str(b.shape()));
}

// ---------------------------------------------------------------------------
// core ops

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    // 1-d lhs is treated as a single row and the row axis is squeezed back off.
    bool vec_lhs = a.ndim() == 1;
    if (!vec_lhs) require_2d(a, "matmul");
    const int m = vec_lhs ? 1 : a.dim(0);
    const int k = vec_lhs ? a.dim(0) : a.dim(1);
    require_2d(b, "matmul");
    if (b.dim(0) != k)
        throw ShapeError("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    const int n = b.dim(1);
    const auto& A = a.data();
    const auto& B = b.data();
    std::vector<real> C(static_cast<size_t>(m) * n, 0.0);
    for (int i = 0; i < m; ++i) {
        for (int p = 0; p < k; ++p) {
            const real av = A[static_cast<size_t>(i) * k + p];
            if (av == 0.0) continue;
            const real* brow = &B[static_cast<size_t>(p) * n];
            real* crow = &C[static_cast<size_t>(i) * n];
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
    Shape out_shape = vec_lhs ? Shape{n} : Shape{m, n};
    return op_result(
        std::move(out_shape), std::move(C), {a, b},
        [m, k, n](detail::Node& node) {
            auto& pa = *node.parents[0];
            auto& pb = *node.parents[1];
            const auto& d = node.grad;
            pa.ensure_grad();
            pb.ensure_grad();
            // dA = dC * B^T
            for (int i = 0; i < m; ++i)
                for (int p = 0; p < k; ++p) {
                    real acc = 0;
                    for (int j = 0; j < n; ++j)
                        acc += d[static_cast<size_t>(i) * n + j] * pb.data[static_cast<size_t>(p) * n + j];
                    pa.grad[static_cast<size_t>(i) * k + p] += acc;
                }
            // dB = A^T * dC
            for (int p = 0; p < k; ++p)
                for (int j = 0; j < n; ++j) {
                    real acc = 0;
                    for (int i = 0; i < m; ++i)
                        acc += pa.data[static_cast<size_t>(i) * k + p] * d[static_cast<size_t>(i) * n + j];
                    pb.grad[static_cast<size_t>(p) * n + j] += acc;
                }
        },
        "matmul");
}

inline Tensor transpose(const Tensor& a) {
    require_2d(a, "transpose");
    const int m = a.dim(0), n = a.dim(1);
    std::vector<real> out(a.numel());
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
            out[static_cast<size_t>(j) * m + i] = a.data()[static_cast<size_t>(i) * n + j];
    return op_result(
        {n, m}, std::move(out), {a},
        [m, n](detail::Node& node) {
            auto& p = *node.parents[0];
            p.ensure_grad();
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j)
                    p.grad[static_cast<size_t>(i) * n + j] += node.grad[static_cast<size_t>(j) * m + i];
        },
        "transpose");
}

namespace detail {

template <typename Fwd, typename BwdA, typename BwdB>
Tensor binary_broadcast(const Tensor& a, const Tensor& b, const char* name, Fwd fwd, BwdA bwd_a,
                        BwdB bwd_b) {
    const Broadcast mode = classify_broadcast(a, b, name);
    const size_t n = a.numel();
    const size_t bn = b.numel();
    std::vector<real> out(n);
    const auto& A = a.data();
    const auto& B = b.data();
    for (size_t i = 0; i < n; ++i) {
        const size_t bi = mode == Broadcast::same ? i : (mode == Broadcast::scalar_rhs ? 0 : i % bn);
        out[i] = fwd(A[i], B[bi]);
    }
    return op_result(
        a.shape(), std::move(out), {a, b},
        [mode, n, bn, bwd_a, bwd_b](detail::Node& node) {
            auto& pa = *node.parents[0];
            auto& pb = *node.parents[1];
            pa.ensure_grad();
            pb.ensure_grad();
            for (size_t i = 0; i < n; ++i) {
                const size_t bi =
                    mode == Broadcast::same ? i : (mode == Broadcast::scalar_rhs ? 0 : i % bn);
                const real d = node.grad[i];
                pa.grad[i] += bwd_a(d, pa.data[i], pb.data[bi]);
                pb.grad[bi] += bwd_b(d, pa.data[i], pb.data[bi]);
            }
        },
        name);
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
    return detail::binary_broadcast(
        a, b, "add", [](real x, real y) { return x + y; },
        [](real d, real, real) { return d; }, [](real d, real, real) { return d; });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    return detail::binary_broadcast(
        a, b, "sub", [](real x, real y) { return x - y; },
        [](real d, real, real) { return d; }, [](real d, real, real) { return -d; });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    return detail::binary_broadcast(
        a, b, "mul", [](real x, real y) { return x * y; },
        [](real d, real, real y) { return d * y; }, [](real d, real x, real) { return d * x; });
}

inline Tensor scale(const Tensor& a, real c) {
    std::vector<real> out(a.numel());
    for (size_t i = 0; i < a.numel(); ++i) out[i] = a.data()[i] * c;
    return op_result(
        a.shape(), std::move(out), {a},
        [c](detail::Node& node) {
            auto& p = *node.parents[0];
            p.ensure_grad();
            for (size_t i = 0; i < node.grad.size(); ++i) p.grad[i] += c * node.grad[i];
        },
        "scale");
}

// x * (1 + gamma) + beta, with gamma/beta broadcast over the rows of x.
// gamma = beta = 0 is the identity.
inline Tensor scale_shift(const Tensor& x, const Tensor& gamma, const Tensor& beta) {
    const Broadcast gm = classify_broadcast(x, gamma, "scale_shift");
    const Broadcast bm = classify_broadcast(x, beta, "scale_shift");
    const size_t n = x.numel();
    const size_t gn = gamma.numel(), bn = beta.numel();
    std::vector<real> out(n);
    for (size_t i = 0; i < n; ++i) {
        const size_t gi = gm == Broadcast::same ? i : (gm == Broadcast::scalar_rhs ? 0 : i % gn);
        const size_t bi = bm == Broadcast::same ? i : (bm == Broadcast::scalar_rhs ? 0 : i % bn);
        out[i] = x.data()[i] * (1.0 + gamma.data()[gi]) + beta.data()[bi];
    }
    return op_result(
        x.shape(), std::move(out), {x, gamma, beta},
        [gm, bm, n, gn, bn](detail::Node& node) {
            auto& px = *node.parents[0];
            auto& pg = *node.parents[1];
            auto& pb = *node.parents[2];
            px.ensure_grad();
            pg.ensure_grad();
            pb.ensure_grad();
            for (size_t i = 0; i < n; ++i) {
                const size_t gi = gm == Broadcast::same ? i : (gm == Broadcast::scalar_rhs ? 0 : i % gn);
                const size_t bi = bm == Broadcast::same ? i : (bm == Broadcast::scalar_rhs ? 0 : i % bn);
                const real d = node.grad[i];
                px.grad[i] += d * (1.0 + pg.data[gi]);
                pg.grad[gi] += d * px.data[i];
                pb.grad[bi] += d;
            }
        },
        "scale_shift");
}

inline Tensor silu(const Tensor& a) {
    std::vector<real> out(a.numel());
    for (size_t i = 0; i < a.numel(); ++i) {
        const real x = a.data()[i];
        out[i] = x / (1.0 + std::exp(-x));
    }
    return op_result(
        a.shape(), std::move(out), {a},
        [](detail::Node& node) {
            auto& p = *node.parents[0];
            p.ensure_grad();
            for (size_t i = 0; i < node.grad.size(); ++i) {
                const real x = p.data[i];
                const real s = 1.0 / (1.0 + std::exp(-x));
                p.grad[i] += node.grad[i] * s * (1.0 + x * (1.0 - s));
            }
        },
        "silu");
}

inline Tensor gelu(const Tensor& a) {
    // tanh approximation, the usual transformer choice.
    constexpr real kC = 0.7978845608028654;  // sqrt(2/pi)
    constexpr real kA = 0.044715;
    std::vector<real> out(a.numel());
    for (size_t i = 0; i < a.numel(); ++i) {
        const real x = a.data()[i];
        out[i] = 0.5 * x * (1.0 + std::tanh(kC * (x + kA * x * x * x)));
    }
    return op_result(
        a.shape(), std::move(out), {a},
        [](detail::Node& node) {
            auto& p = *node.parents[0];
            p.ensure_grad();
            for (size_t i = 0; i < node.grad.size(); ++i) {
                const real x = p.data[i];
                const real u = kC * (x + kA * x * x * x);
                const real t = std::tanh(u);
                const real du = kC * (1.0 + 3.0 * kA * x * x);
                p.grad[i] += node.grad[i] * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du);
            }
        },
        "gelu");
}

// Per-last-axis normalization to zero mean / unit variance. No learned
// affine: scale and shift always come from adaLN modulation.
inline Tensor layer_norm(const Tensor& a, real eps = 1e-6) {
    if (a.ndim() < 1 || a.dim(a.ndim() - 1) < 1)
        throw ShapeError("layer_norm needs a trailing axis, got " + shape_str(a.shape()));
    if (eps <= 0) throw ConfigError("layer_norm eps must be positive");
    const int d = a.dim(a.ndim() - 1);
    const size_t rows = a.numel() / d;
    std::vector<real> out(a.numel());
    for (size_t r = 0; r < rows; ++r) {
        const real* x = &a.data()[r * d];
        real mean = 0;
        for (int j = 0; j < d; ++j) mean += x[j];
        mean /= d;
        real var = 0;
        for (int j = 0; j < d; ++j) var += (x[j] - mean) * (x[j] - mean);
        var /= d;
        const real inv = 1.0 / std::sqrt(var + eps);
        for (int j = 0; j < d; ++j) out[r * d + j] = (x[j] - mean) * inv;
    }
    return op_result(
        a.shape(), std::move(out), {a},
        [d, rows, eps](detail::Node& node) {
            auto& p = *node.parents[0];
            p.ensure_grad();
            for (size_t r = 0; r < rows; ++r) {
                const real* x = &p.data[r * d];
                const real* dy = &node.grad[r * d];
                real mean = 0;
                for (int j = 0; j < d; ++j) mean += x[j];
                mean /= d;
                real var = 0;
                for (int j = 0; j < d; ++j) var += (x[j] - mean) * (x[j] - mean);
                var /= d;
                const real inv = 1.0 / std::sqrt(var + eps);
                real dy_mean = 0, dyy_mean = 0;
                for (int j = 0; j < d; ++j) {
                    const real y = (x[j] - mean) * inv;
                    dy_mean += dy[j];
                    dyy_mean += dy[j] * y;
                }
                dy_mean /= d;
                dyy_mean /= d;
                for (int j = 0; j < d; ++j) {
                    const real y = (x[j] - mean) * inv;
                    p.grad[r * d + j] += inv * (dy[j] - dy_mean - y * dyy_mean);
                }
            }
        },
        "layer_norm");
}

// Numerically stable softmax over the last axis; rows sum to one.
inline Tensor softmax(const Tensor& a) {
    if (a.ndim() < 1 || a.dim(a.ndim() - 1) < 1)
        throw ShapeError("softmax needs a trailing axis, got " + shape_str(a.shape()));
    const int d = a.dim(a.ndim() - 1);
    const size_t rows = a.numel() / d;
    std::vector<real> out(a.numel());
    for (size_t r = 0; r < rows; ++r) {
        const real* x = &a.data()[r * d];
        real mx = x[0];
        for (int j = 1; j < d; ++j) mx = std::max(mx, x[j]);
        real sum = 0;
        for (int j = 0; j < d; ++j) {
            out[r * d + j] = std::exp(x[j] - mx);
            sum += out[r * d + j];
        }
        for (int j = 0; j < d; ++j) out[r * d + j] /= sum;
    }
    return op_result(
        a.shape(), std::move(out), {a},
        [d, rows](detail::Node& node) {
            auto& p = *node.parents[0];
            p.ensure_grad();
            for (size_t r = 0; r < rows; ++r) {
                const real* dy = &node.grad[r * d];
                const real* y = &node.data[r * d];
                real dot = 0;
                for (int j = 0; j < d; ++j) dot += dy[j] * y[j];
                for (int j = 0; j < d; ++j) p.grad[r * d + j] += y[j] * (dy[j] - dot);
            }
        },
        "softmax");
}

inline Tensor reshape(const Tensor& a, Shape shape) {
    if (shape_numel(shape) != a.numel())
        throw ShapeError("reshape from " + shape_str(a.shape()) + " to " + shape_str(shape) +
                         " changes element count");
    std::vector<real> out = a.data();
    return op_result(
        std::move(shape), std::move(out), {a},
        [](detail::Node& node) {
            auto& p = *node.parents[0];
            p.ensure_grad();
            for (size_t i = 0; i < node.grad.size(); ++i) p.grad[i] += node.grad[i];
        },
        "reshape");
}

inline Tensor sum(const Tensor& a) {
    real s = 0;
    for (real x : a.data()) s += x;
    return op_result(
        {}, {s}, {a},
        [](detail::Node& node) {
            auto& p = *node.parents[0];
            p.ensure_grad();
            for (size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += node.grad[0];
        },
        "sum");
}

inline Tensor mean(const Tensor& a) {
    const real inv = 1.0 / static_cast<real>(a.numel());
    real s = 0;
    for (real x : a.data()) s += x;
    return op_result(
        {}, {s * inv}, {a},
        [inv](detail::Node& node) {
            auto& p = *node.parents[0];
            p.ensure_grad();
            for (size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += node.grad[0] * inv;
        },
        "mean");
}

// Mean over the rows of a 2-d tensor -> vector of length cols.
inline Tensor mean_rows(const Tensor& a) {
    require_2d(a, "mean_rows");
    const int m = a.dim(0), n = a.dim(1);
    std::vector<real> out(static_cast<size_t>(n), 0.0);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out[j] += a.data()[static_cast<size_t>(i) * n + j];
    for (int j = 0; j < n; ++j) out[j] /= m;
    return op_result(
        {n}, std::move(out), {a},
        [m, n](detail::Node& node) {
            auto& p = *node.parents[0];
            p.ensure_grad();
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j)
                    p.grad[static_cast<size_t>(i) * n + j] += node.grad[j] / m;
        },
        "mean_rows");
}

inline Tensor slice_cols(const Tensor& a, int c0, int c1) {
    require_2d(a, "slice_cols");
    const int m = a.dim(0), n = a.dim(1);
    if (c0 < 0 || c1 > n || c0 >= c1)
        throw ShapeError("slice_cols [" + std::to_string(c0) + "," + std::to_string(c1) +
                         ") out of range for " + shape_str(a.shape()));
    const int w = c1 - c0;
    std::vector<real> out(static_cast<size_t>(m) * w);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < w; ++j)
            out[static_cast<size_t>(i) * w + j] = a.data()[static_cast<size_t>(i) * n + c0 + j];
    return op_result(
        {m, w}, std::move(out), {a},
        [m, n, c0, w](detail::Node& node) {
            auto& p = *node.parents[0];
            p.ensure_grad();
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < w; ++j)
                    p.grad[static_cast<size_t>(i) * n + c0 + j] +=
                        node.grad[static_cast<size_t>(i) * w + j];
        },
        "slice_cols");
}

inline Tensor slice_vec(const Tensor& a, int i0, int i1) {
    if (a.ndim() != 1)
        throw ShapeError("slice_vec expects a 1-d tensor, got " + shape_str(a.shape()));
    const int n = a.dim(0);
    if (i0 < 0 || i1 > n || i0 >= i1)
        throw ShapeError("slice_vec [" + std::to_string(i0) + "," + std::to_string(i1) +
                         ") out of range for " + shape_str(a.shape()));
    std::vector<real> out(a.data().begin() + i0, a.data().begin() + i1);
    return op_result(
        {i1 - i0}, std::move(out), {a},
        [i0](detail::Node& node) {
            auto& p = *node.parents[0];
            p.ensure_grad();
            for (size_t j = 0; j < node.grad.size(); ++j) p.grad[i0 + j] += node.grad[j];
        },
        "slice_vec");
}

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols of zero tensors");
    const int m = parts[0].dim(0);
    int total = 0;
    for (const Tensor& t : parts) {
        require_2d(t, "concat_cols");
        if (t.dim(0) != m)
            throw ShapeError("concat_cols: row count mismatch " + shape_str(parts[0].shape()) +
                             " vs " + shape_str(t.shape()));
        total += t.dim(1);
    }
    std::vector<real> out(static_cast<size_t>(m) * total);
    std::vector<int> widths;
    int off = 0;
    for (const Tensor& t : parts) {
        const int w = t.dim(1);
        widths.push_back(w);
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < w; ++j)
                out[static_cast<size_t>(i) * total + off + j] =
                    t.data()[static_cast<size_t>(i) * w + j];
        off += w;
    }
    return op_result(
        {m, total}, std::move(out), parts,
        [m, total, widths](detail::Node& node) {
            int off2 = 0;
            for (size_t k = 0; k < node.parents.size(); ++k) {
                auto& p = *node.parents[k];
                p.ensure_grad();
                const int w = widths[k];
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < w; ++j)
                        p.grad[static_cast<size_t>(i) * w + j] +=
                            node.grad[static_cast<size_t>(i) * total + off2 + j];
                off2 += w;
            }
        },
        "concat_cols");
}

// ---------------------------------------------------------------------------
// patch rearrangement: [C x H x W] <-> [T x p*p*C], tokens row-major over the
// (H/p, W/p) grid. Pure permutations, exact inverses of each other.

inline size_t patch_source_index(int C, int H, int W, int p, size_t patch_elem_count, size_t tok,
                                 size_t e) {
    const int gw = W / p;
    const int ty = static_cast<int>(tok) / gw;
    const int tx = static_cast<int>(tok) % gw;
    const int c = static_cast<int>(e) / (p * p);
    const int dy = (static_cast<int>(e) % (p * p)) / p;
    const int dx = static_cast<int>(e) % p;
    (void)C;
    (void)H;
    (void)patch_elem_count;
    return (static_cast<size_t>(c) * H + (ty * p + dy)) * W + (tx * p + dx);
}

inline Tensor patch_rearrange(const Tensor& latent, int p) {
    if (latent.ndim() != 3)
        throw ShapeError("patch_rearrange expects [CxHxW], got " + shape_str(latent.shape()));
    const int C = latent.dim(0), H = latent.dim(1), W = latent.dim(2);
    if (p <= 0 || H % p != 0 || W % p != 0)
        throw ShapeError("patch size " + std::to_string(p) + " does not divide latent dims H=" +
                         std::to_string(H) + " W=" + std::to_string(W));
    const int tokens = (H / p) * (W / p);
    const int pe = p * p * C;
    std::vector<real> out(static_cast<size_t>(tokens) * pe);
    for (int t = 0; t < tokens; ++t)
        for (int e = 0; e < pe; ++e)
            out[static_cast<size_t>(t) * pe + e] =
                latent.data()[patch_source_index(C, H, W, p, pe, t, e)];
    return op_result(
        {tokens, pe}, std::move(out), {latent},
        [C, H, W, p, tokens, pe](detail::Node& node) {
            auto& par = *node.parents[0];
            par.ensure_grad();
            for (int t = 0; t < tokens; ++t)
                for (int e = 0; e < pe; ++e)
                    par.grad[patch_source_index(C, H, W, p, pe, t, e)] +=
                        node.grad[static_cast<size_t>(t) * pe + e];
        },
        "patch_rearrange");
}

inline Tensor patch_merge(const Tensor& tokens, int C, int H, int W, int p) {
    require_2d(tokens, "patch_merge");
    const int pe = p * p * C;
    const int expect_tokens = (H / p) * (W / p);
    if (p <= 0 || H % p != 0 || W % p != 0 || tokens.dim(0) != expect_tokens ||
        tokens.dim(1) != pe)
        throw ShapeError("patch_merge: tokens " + shape_str(tokens.shape()) +
                         " do not tile a [" + std::to_string(C) + "x" + std::to_string(H) + "x" +
                         std::to_string(W) + "] latent with p=" + std::to_string(p));
    std::vector<real> out(static_cast<size_t>(C) * H * W);
    for (int t = 0; t < expect_tokens; ++t)
        for (int e = 0; e < pe; ++e)
            out[patch_source_index(C, H, W, p, pe, t, e)] =
                tokens.data()[static_cast<size_t>(t) * pe + e];
    return op_result(
        {C, H, W}, std::move(out), {tokens},
        [C, H, W, p, expect_tokens, pe](detail::Node& node) {
            auto& par = *node.parents[0];
            par.ensure_grad();
            for (int t = 0; t < expect_tokens; ++t)
                for (int e = 0; e < pe; ++e)
                    par.grad[static_cast<size_t>(t) * pe + e] +=
                        node.grad[patch_source_index(C, H, W, p, pe, t, e)];
        },
        "patch_merge");
}

// ---------------------------------------------------------------------------
// backward

// Populates grads of every requires_grad node reachable from `loss`. Visits
// each node exactly once, in reverse insertion order; fan-out accumulates
// additively.
inline void backward(const Tensor& loss) {
    if (loss.numel() != 1)
        throw ContractError("backward requires a scalar loss, got shape " +
                            shape_str(loss.shape()));
    using detail::Node;
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<Node*> stack{loss.node().get()};
    std::vector<std::shared_ptr<Node>> keep;  // nothing to keep: handles own parents
    (void)keep;
    while (!stack.empty()) {
        Node* n = stack.back();
        stack.pop_back();
        if (!n->requires_grad || seen.count(n)) continue;
        seen.insert(n);
        order.push_back(n);
        for (auto& p : n->parents) stack.push_back(p.get());
    }
    std::sort(order.begin(), order.end(), [](Node* a, Node* b) { return a->id > b->id; });
    loss.node()->ensure_grad();
    loss.node()->grad[0] += 1.0;
    for (Node* n : order) {
        if (n->backprop) {
            n->ensure_grad();
            n->backprop(*n);
        }
    }
}

// ---------------------------------------------------------------------------
// finite-difference oracle

// Max over coordinates of |analytic - numeric| / (|analytic| + |numeric| + 1e-8)
// where numeric is the central difference of f at x. f must be scalar-valued.
inline real finite_difference_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                                    real h = 1e-4) {
    if (h <= 0) throw ContractError("finite_difference_check requires h > 0");
    Tensor probe = x.detach(/*requires_grad=*/true);
    Tensor y = f(probe);
    if (y.numel() != 1)
        throw ContractError("finite_difference_check requires a scalar-valued f");
    backward(y);
    std::vector<real> analytic = probe.grad();

    Tensor base = x.detach(false);
    real worst = 0;
    for (size_t i = 0; i < base.numel(); ++i) {
        const real keep = base.mutable_data()[i];
        base.mutable_data()[i] = keep + h;
        const real fp = f(base).item();
        base.mutable_data()[i] = keep - h;
        const real fm = f(base).item();
        base.mutable_data()[i] = keep;
        const real numeric = (fp - fm) / (2 * h);
        const real err = std::abs(analytic[i] - numeric) /
                         (std::abs(analytic[i]) + std::abs(numeric) + 1e-8);
        worst = std::max(worst, err);
    }
    return worst;
}

}  // namespace pixart
