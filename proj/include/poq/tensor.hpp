#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "poq/common.hpp"

namespace poq {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << "]";
    return os.str();
}

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (auto e : s) n *= e;
    return n;
}

namespace detail {
inline bool& grad_flag() {
    thread_local bool enabled = true;
    return enabled;
}
} // namespace detail

inline bool grad_enabled() { return detail::grad_flag(); }

// Disables graph recording on the current thread while alive.
struct NoGradGuard {
    NoGradGuard() : prev_(detail::grad_flag()) { detail::grad_flag() = false; }
    ~NoGradGuard() { detail::grad_flag() = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

/// Dense tensor node on a reverse-mode tape. Ops link nodes through
/// `parents` and a `backprop` closure that scatters this node's grad
/// into its parents. Grads accumulate until zero_grad().
template <typename T>
class Tensor : public std::enable_shared_from_this<Tensor<T>> {
public:
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad; // empty until needed; same size as value once allocated
    bool requires_grad = false;

    std::vector<std::shared_ptr<Tensor<T>>> parents;
    std::function<void(Tensor<T>&)> backprop;

    static std::shared_ptr<Tensor<T>> create(Shape s, bool needs_grad = false) {
        auto t = std::make_shared<Tensor<T>>();
        t->shape = std::move(s);
        t->value.assign(shape_numel(t->shape), T(0));
        t->requires_grad = needs_grad;
        return t;
    }

    static std::shared_ptr<Tensor<T>> from_values(Shape s, std::vector<T> v, bool needs_grad = false) {
        if (shape_numel(s) != v.size())
            throw ShapeError("tensor data size " + std::to_string(v.size()) +
                             " does not match shape " + shape_str(s));
        auto t = std::make_shared<Tensor<T>>();
        t->shape = std::move(s);
        t->value = std::move(v);
        t->requires_grad = needs_grad;
        return t;
    }

    std::size_t size() const { return value.size(); }
    std::size_t rows() const { return shape.empty() ? 1 : shape[0]; }
    std::size_t cols() const { return shape.size() < 2 ? (shape.empty() ? 1 : shape[0]) : shape[1]; }

    T& at(std::size_t r, std::size_t c) { return value[r * cols() + c]; }
    T at(std::size_t r, std::size_t c) const { return value[r * cols() + c]; }

    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    }

    void zero_grad() {
        if (!grad.empty()) std::fill(grad.begin(), grad.end(), T(0));
    }

    bool all_finite() const {
        for (T v : value)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }
};

template <typename T>
using TensorPtr = std::shared_ptr<Tensor<T>>;

template <typename T>
void assert_finite(const Tensor<T>& t, const char* context) {
    if (!t.all_finite())
        throw DataError(std::string("non-finite values in ") + context);
}

namespace detail {

template <typename T>
TensorPtr<T> make_node(Shape shape, std::vector<TensorPtr<T>> parents,
                       std::function<void(Tensor<T>&)> backprop) {
    auto out = Tensor<T>::create(std::move(shape));
    if (grad_enabled()) {
        bool need = false;
        for (const auto& p : parents)
            if (p->requires_grad) { need = true; break; }
        if (need) {
            out->requires_grad = true;
            out->parents = std::move(parents);
            out->backprop = std::move(backprop);
        }
    }
    return out;
}

// c += a·b, row-major (m×k)(k×n)
template <typename T>
void gemm_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const T* arow = a + i * k;
        T* crow = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            T av = arow[p];
            const T* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// c += a·bᵀ, (m×k)(n×k) -> m×n
template <typename T>
void gemm_nt_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const T* arow = a + i * k;
        T* crow = c + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            const T* brow = b + j * k;
            T acc = T(0);
            for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
            crow[j] += acc;
        }
    }
}

// c += aᵀ·b, (m×k)ᵀ(m×n) -> k×n
template <typename T>
void gemm_tn_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const T* arow = a + i * k;
        const T* brow = b + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            T av = arow[p];
            T* crow = c + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

template <typename T>
void require_matrix(const TensorPtr<T>& t, const char* op) {
    if (t->shape.size() != 2)
        throw ShapeError(std::string(op) + ": expected a 2-d tensor, got " + shape_str(t->shape));
}

} // namespace detail

template <typename T>
TensorPtr<T> matmul(const TensorPtr<T>& a, const TensorPtr<T>& b) {
    detail::require_matrix(a, "matmul");
    detail::require_matrix(b, "matmul");
    std::size_t m = a->shape[0], k = a->shape[1], k2 = b->shape[0], n = b->shape[1];
    if (k != k2)
        throw ShapeError("matmul: inner extents differ, " + shape_str(a->shape) + " vs " +
                         shape_str(b->shape));
    auto out = detail::make_node<T>({m, n}, {a, b}, [a, b, m, k, n](Tensor<T>& self) {
        if (a->requires_grad) {
            a->ensure_grad();
            detail::gemm_nt_acc(self.grad.data(), b->value.data(), a->grad.data(), m, n, k);
        }
        if (b->requires_grad) {
            b->ensure_grad();
            detail::gemm_tn_acc(a->value.data(), self.grad.data(), b->grad.data(), m, k, n);
        }
    });
    detail::gemm_acc(a->value.data(), b->value.data(), out->value.data(), m, k, n);
    return out;
}

// a·bᵀ for (m×k)(n×k); avoids materializing transposes on the tape.
template <typename T>
TensorPtr<T> matmul_nt(const TensorPtr<T>& a, const TensorPtr<T>& b) {
    detail::require_matrix(a, "matmul_nt");
    detail::require_matrix(b, "matmul_nt");
    std::size_t m = a->shape[0], k = a->shape[1], n = b->shape[0];
    if (k != b->shape[1])
        throw ShapeError("matmul_nt: inner extents differ, " + shape_str(a->shape) + " vs " +
                         shape_str(b->shape));
    auto out = detail::make_node<T>({m, n}, {a, b}, [a, b, m, k, n](Tensor<T>& self) {
        if (a->requires_grad) {
            a->ensure_grad();
            detail::gemm_acc(self.grad.data(), b->value.data(), a->grad.data(), m, n, k);
        }
        if (b->requires_grad) {
            b->ensure_grad();
            detail::gemm_tn_acc(self.grad.data(), a->value.data(), b->grad.data(), m, n, k);
        }
    });
    detail::gemm_nt_acc(a->value.data(), b->value.data(), out->value.data(), m, k, n);
    return out;
}

template <typename T>
TensorPtr<T> add(const TensorPtr<T>& a, const TensorPtr<T>& b) {
    if (a->shape != b->shape)
        throw ShapeError("add: shape mismatch " + shape_str(a->shape) + " vs " + shape_str(b->shape));
    auto out = detail::make_node<T>(a->shape, {a, b}, [a, b](Tensor<T>& self) {
        if (a->requires_grad) {
            a->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) a->grad[i] += self.grad[i];
        }
        if (b->requires_grad) {
            b->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) b->grad[i] += self.grad[i];
        }
    });
    for (std::size_t i = 0; i < out->value.size(); ++i) out->value[i] = a->value[i] + b->value[i];
    return out;
}

// Broadcasts a length-n row vector over every row of an m×n matrix.
template <typename T>
TensorPtr<T> add_rowvec(const TensorPtr<T>& x, const TensorPtr<T>& v) {
    detail::require_matrix(x, "add_rowvec");
    std::size_t m = x->shape[0], n = x->shape[1];
    if (v->size() != n)
        throw ShapeError("add_rowvec: vector size " + std::to_string(v->size()) +
                         " does not match columns of " + shape_str(x->shape));
    auto out = detail::make_node<T>(x->shape, {x, v}, [x, v, m, n](Tensor<T>& self) {
        if (x->requires_grad) {
            x->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) x->grad[i] += self.grad[i];
        }
        if (v->requires_grad) {
            v->ensure_grad();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) v->grad[j] += self.grad[i * n + j];
        }
    });
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out->value[i * n + j] = x->value[i * n + j] + v->value[j];
    return out;
}

template <typename T>
TensorPtr<T> scale(const TensorPtr<T>& x, T factor) {
    auto out = detail::make_node<T>(x->shape, {x}, [x, factor](Tensor<T>& self) {
        x->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) x->grad[i] += factor * self.grad[i];
    });
    for (std::size_t i = 0; i < out->value.size(); ++i) out->value[i] = factor * x->value[i];
    return out;
}

template <typename T>
TensorPtr<T> hadamard(const TensorPtr<T>& a, const TensorPtr<T>& b) {
    if (a->shape != b->shape)
        throw ShapeError("hadamard: shape mismatch " + shape_str(a->shape) + " vs " +
                         shape_str(b->shape));
    auto out = detail::make_node<T>(a->shape, {a, b}, [a, b](Tensor<T>& self) {
        if (a->requires_grad) {
            a->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                a->grad[i] += self.grad[i] * b->value[i];
        }
        if (b->requires_grad) {
            b->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                b->grad[i] += self.grad[i] * a->value[i];
        }
    });
    for (std::size_t i = 0; i < out->value.size(); ++i) out->value[i] = a->value[i] * b->value[i];
    return out;
}

template <typename T>
TensorPtr<T> relu(const TensorPtr<T>& x) {
    auto out = detail::make_node<T>(x->shape, {x}, [x](Tensor<T>& self) {
        x->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            if (x->value[i] > T(0)) x->grad[i] += self.grad[i];
    });
    for (std::size_t i = 0; i < out->value.size(); ++i)
        out->value[i] = x->value[i] > T(0) ? x->value[i] : T(0);
    return out;
}

// Row-wise softmax, stabilized by subtracting the row max.
template <typename T>
TensorPtr<T> softmax_rows(const TensorPtr<T>& x) {
    detail::require_matrix(x, "softmax_rows");
    std::size_t m = x->shape[0], n = x->shape[1];
    auto out = detail::make_node<T>(x->shape, {x}, [x, m, n](Tensor<T>& self) {
        x->ensure_grad();
        for (std::size_t i = 0; i < m; ++i) {
            const T* s = self.value.data() + i * n;
            const T* g = self.grad.data() + i * n;
            T dot = T(0);
            for (std::size_t j = 0; j < n; ++j) dot += g[j] * s[j];
            T* xg = x->grad.data() + i * n;
            for (std::size_t j = 0; j < n; ++j) xg[j] += s[j] * (g[j] - dot);
        }
    });
    for (std::size_t i = 0; i < m; ++i) {
        const T* row = x->value.data() + i * n;
        T mx = row[0];
        for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
        if (!std::isfinite(static_cast<double>(mx)))
            throw DataError("softmax_rows: non-finite input row " + std::to_string(i));
        T* o = out->value.data() + i * n;
        T sum = T(0);
        for (std::size_t j = 0; j < n; ++j) {
            o[j] = std::exp(row[j] - mx);
            sum += o[j];
        }
        for (std::size_t j = 0; j < n; ++j) o[j] /= sum;
    }
    return out;
}

// Per-row normalization to zero mean / unit variance, then affine.
// Epsilon sits inside the square root.
template <typename T>
TensorPtr<T> layer_norm(const TensorPtr<T>& x, const TensorPtr<T>& gain, const TensorPtr<T>& bias) {
    detail::require_matrix(x, "layer_norm");
    std::size_t m = x->shape[0], n = x->shape[1];
    if (n < 2) throw ShapeError("layer_norm: need at least 2 columns, got " + shape_str(x->shape));
    if (gain->size() != n || bias->size() != n)
        throw ShapeError("layer_norm: gain/bias size must be " + std::to_string(n));
    const T eps = T(1e-5);

    // normalized values and inverse stddev are cached for the backward pass
    auto xhat = std::make_shared<std::vector<T>>(m * n);
    auto inv_sigma = std::make_shared<std::vector<T>>(m);

    auto out = detail::make_node<T>(
        x->shape, {x, gain, bias}, [x, gain, bias, xhat, inv_sigma, m, n](Tensor<T>& self) {
            if (gain->requires_grad) gain->ensure_grad();
            if (bias->requires_grad) bias->ensure_grad();
            if (x->requires_grad) x->ensure_grad();
            for (std::size_t i = 0; i < m; ++i) {
                const T* g = self.grad.data() + i * n;
                const T* xh = xhat->data() + i * n;
                if (gain->requires_grad)
                    for (std::size_t j = 0; j < n; ++j) gain->grad[j] += g[j] * xh[j];
                if (bias->requires_grad)
                    for (std::size_t j = 0; j < n; ++j) bias->grad[j] += g[j];
                if (x->requires_grad) {
                    T mean_gy = T(0), mean_gyx = T(0);
                    for (std::size_t j = 0; j < n; ++j) {
                        T gy = g[j] * gain->value[j];
                        mean_gy += gy;
                        mean_gyx += gy * xh[j];
                    }
                    mean_gy /= T(n);
                    mean_gyx /= T(n);
                    T is = (*inv_sigma)[i];
                    T* xg = x->grad.data() + i * n;
                    for (std::size_t j = 0; j < n; ++j) {
                        T gy = g[j] * gain->value[j];
                        xg[j] += is * (gy - mean_gy - xh[j] * mean_gyx);
                    }
                }
            }
        });

    for (std::size_t i = 0; i < m; ++i) {
        const T* row = x->value.data() + i * n;
        T mean = T(0);
        for (std::size_t j = 0; j < n; ++j) mean += row[j];
        mean /= T(n);
        T var = T(0);
        for (std::size_t j = 0; j < n; ++j) {
            T d = row[j] - mean;
            var += d * d;
        }
        var /= T(n);
        T is = T(1) / std::sqrt(var + eps);
        (*inv_sigma)[i] = is;
        T* xh = xhat->data() + i * n;
        T* o = out->value.data() + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            xh[j] = (row[j] - mean) * is;
            o[j] = xh[j] * gain->value[j] + bias->value[j];
        }
    }
    return out;
}

template <typename T>
TensorPtr<T> slice_cols(const TensorPtr<T>& x, std::size_t c0, std::size_t c1) {
    detail::require_matrix(x, "slice_cols");
    std::size_t m = x->shape[0], n = x->shape[1];
    if (c0 >= c1 || c1 > n)
        throw ShapeError("slice_cols: bad range [" + std::to_string(c0) + ", " + std::to_string(c1) +
                         ") for " + shape_str(x->shape));
    std::size_t w = c1 - c0;
    auto out = detail::make_node<T>({m, w}, {x}, [x, c0, w, m, n](Tensor<T>& self) {
        x->ensure_grad();
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < w; ++j) x->grad[i * n + c0 + j] += self.grad[i * w + j];
    });
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < w; ++j) out->value[i * w + j] = x->value[i * n + c0 + j];
    return out;
}

template <typename T>
TensorPtr<T> concat_cols(const std::vector<TensorPtr<T>>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no inputs");
    std::size_t m = parts[0]->shape[0], total = 0;
    for (const auto& p : parts) {
        detail::require_matrix(p, "concat_cols");
        if (p->shape[0] != m) throw ShapeError("concat_cols: row count mismatch");
        total += p->shape[1];
    }
    auto out = detail::make_node<T>({m, total}, parts, [parts, m, total](Tensor<T>& self) {
        std::size_t off = 0;
        for (const auto& p : parts) {
            std::size_t w = p->shape[1];
            if (p->requires_grad) {
                p->ensure_grad();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < w; ++j)
                        p->grad[i * w + j] += self.grad[i * total + off + j];
            }
            off += w;
        }
    });
    std::size_t off = 0;
    for (const auto& p : parts) {
        std::size_t w = p->shape[1];
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < w; ++j) out->value[i * total + off + j] = p->value[i * w + j];
        off += w;
    }
    return out;
}

template <typename T>
TensorPtr<T> sum_all(const TensorPtr<T>& x) {
    auto out = detail::make_node<T>({1}, {x}, [x](Tensor<T>& self) {
        x->ensure_grad();
        for (std::size_t i = 0; i < x->grad.size(); ++i) x->grad[i] += self.grad[0];
    });
    T acc = T(0);
    for (T v : x->value) acc += v;
    out->value[0] = acc;
    return out;
}

/// scale · Σ_rows Σ_cols −targets[r][c] · log_softmax(logits)[r][c], as one
/// fused scalar node. `targets` is a plain row-major weight matrix, treated
/// as a constant; rows need not sum to one.
template <typename T>
TensorPtr<T> cross_entropy_rows(const TensorPtr<T>& logits, std::vector<T> targets, T loss_scale) {
    detail::require_matrix(logits, "cross_entropy_rows");
    std::size_t m = logits->shape[0], n = logits->shape[1];
    if (targets.size() != m * n)
        throw ShapeError("cross_entropy_rows: target matrix size " + std::to_string(targets.size()) +
                         " does not match logits " + shape_str(logits->shape));

    auto probs = std::make_shared<std::vector<T>>(m * n);
    auto tgt = std::make_shared<std::vector<T>>(std::move(targets));

    auto out = detail::make_node<T>({1}, {logits}, [logits, probs, tgt, loss_scale, m, n](Tensor<T>& self) {
        logits->ensure_grad();
        T g = self.grad[0] * loss_scale;
        for (std::size_t i = 0; i < m; ++i) {
            const T* y = tgt->data() + i * n;
            const T* s = probs->data() + i * n;
            T wsum = T(0);
            for (std::size_t j = 0; j < n; ++j) wsum += y[j];
            T* lg = logits->grad.data() + i * n;
            for (std::size_t j = 0; j < n; ++j) lg[j] += g * (wsum * s[j] - y[j]);
        }
    });

    T loss = T(0);
    for (std::size_t i = 0; i < m; ++i) {
        const T* row = logits->value.data() + i * n;
        T mx = row[0];
        for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
        if (!std::isfinite(static_cast<double>(mx)))
            throw DataError("cross_entropy_rows: non-finite logits row " + std::to_string(i));
        T sum = T(0);
        T* s = probs->data() + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            s[j] = std::exp(row[j] - mx);
            sum += s[j];
        }
        T lse = mx + std::log(sum);
        for (std::size_t j = 0; j < n; ++j) s[j] /= sum;
        const T* y = tgt->data() + i * n;
        for (std::size_t j = 0; j < n; ++j) loss -= y[j] * (row[j] - lse);
    }
    out->value[0] = loss_scale * loss;
    return out;
}

/// Reverse-mode sweep from a scalar node. Gradients accumulate into every
/// requires_grad tensor reachable from `loss`; call zero_grad on parameters
/// between steps. `seed` scales the whole sweep (defaults to dL/dL = 1).
template <typename T>
void backward(const TensorPtr<T>& loss, T seed = T(1)) {
    if (loss->size() != 1)
        throw ShapeError("backward: loss must be a scalar, got " + shape_str(loss->shape));

    // iterative post-order over the parent DAG
    std::vector<Tensor<T>*> order;
    std::unordered_set<Tensor<T>*> visited;
    std::vector<std::pair<Tensor<T>*, std::size_t>> stack;
    stack.emplace_back(loss.get(), 0);
    visited.insert(loss.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Tensor<T>* p = node->parents[next++].get();
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    loss->ensure_grad();
    loss->grad[0] += seed;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Tensor<T>* node = *it;
        if (node->backprop) {
            node->ensure_grad();
            node->backprop(*node);
        }
    }
}

// Xavier/Glorot uniform; fan-in/fan-out from the first two extents.
template <typename T>
void xavier_uniform(Tensor<T>& t, Rng& rng) {
    std::size_t fan_in = t.shape.empty() ? 1 : t.shape[0];
    std::size_t fan_out = t.shape.size() > 1 ? t.shape[1] : fan_in;
    double limit = std::sqrt(6.0 / double(fan_in + fan_out));
    for (auto& v : t.value) v = static_cast<T>(rng.uniform(-limit, limit));
}

} // namespace poq
