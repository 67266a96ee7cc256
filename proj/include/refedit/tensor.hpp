#ifndef REFEDIT_TENSOR_HPP
#define REFEDIT_TENSOR_HPP

// Dense tensor with reverse-mode autodiff. Tensors are cheap handles onto a
// shared node; ops build the graph and backward() walks it in reverse
// topological order. Instantiate with float for training/inference and with
// double for gradient checks.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include <Eigen/Core>

#include "refedit/rng.hpp"

namespace refedit {

inline std::string shape_str(const std::vector<size_t>& s) {
    std::ostringstream os;
    os << "{";
    for (size_t i = 0; i < s.size(); ++i) {
        os << (i ? "," : "") << s[i];
    }
    os << "}";
    return os.str();
}

inline size_t shape_numel(const std::vector<size_t>& s) {
    size_t n = 1;
    for (size_t d : s) {
        n *= d;
    }
    return n;
}

template <typename T>
struct TensorNode {
    std::vector<size_t> shape;
    std::vector<T> value;
    std::vector<T> grad;  // empty until backward touches this node
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(TensorNode&)> backprop;

    void ensure_grad() {
        if (grad.size() != value.size()) {
            grad.assign(value.size(), T(0));
        }
    }
};

template <typename T>
class Tensor {
    static_assert(std::is_floating_point_v<T>);

public:
    std::shared_ptr<TensorNode<T>> node;

    Tensor() = default;

    explicit Tensor(std::vector<size_t> shape, T fill = T(0)) {
        node = std::make_shared<TensorNode<T>>();
        node->shape = std::move(shape);
        node->value.assign(shape_numel(node->shape), fill);
    }

    Tensor(std::vector<size_t> shape, std::vector<T> values) {
        if (shape_numel(shape) != values.size()) {
            throw std::invalid_argument("tensor: shape " + shape_str(shape) +
                                        " does not match " + std::to_string(values.size()) +
                                        " values");
        }
        node = std::make_shared<TensorNode<T>>();
        node->shape = std::move(shape);
        node->value = std::move(values);
    }

    static Tensor scalar(T v) { return Tensor({1}, std::vector<T>{v}); }

    static Tensor zeros(std::vector<size_t> shape) { return Tensor(std::move(shape)); }

    static Tensor full(std::vector<size_t> shape, T v) { return Tensor(std::move(shape), v); }

    static Tensor randn(std::vector<size_t> shape, Rng& rng, T stddev = T(1)) {
        Tensor t(std::move(shape));
        for (T& v : t.node->value) {
            v = static_cast<T>(rng.normal()) * stddev;
        }
        return t;
    }

    static Tensor uniform(std::vector<size_t> shape, Rng& rng, T lo, T hi) {
        Tensor t(std::move(shape));
        for (T& v : t.node->value) {
            v = static_cast<T>(rng.uniform(static_cast<double>(lo), static_cast<double>(hi)));
        }
        return t;
    }

    bool defined() const { return node != nullptr; }

    const std::vector<size_t>& shape() const { return node->shape; }
    size_t ndim() const { return node->shape.size(); }
    size_t numel() const { return node->value.size(); }

    size_t rows() const {
        require_2d("rows");
        return node->shape[0];
    }
    size_t cols() const {
        require_2d("cols");
        return node->shape[1];
    }

    std::vector<T>& values() { return node->value; }
    const std::vector<T>& values() const { return node->value; }
    T* data() { return node->value.data(); }
    const T* data() const { return node->value.data(); }

    T item() const {
        if (numel() != 1) {
            throw std::invalid_argument("item: tensor " + shape_str(node->shape) +
                                        " is not a scalar");
        }
        return node->value[0];
    }

    bool requires_grad() const { return node->requires_grad; }

    Tensor& set_requires_grad(bool b) {
        node->requires_grad = b;
        return *this;
    }

    const std::vector<T>& grad() const { return node->grad; }

    void zero_grad() { node->grad.assign(node->value.size(), T(0)); }

    // value copy detached from the graph
    Tensor detach() const {
        Tensor t;
        t.node = std::make_shared<TensorNode<T>>();
        t.node->shape = node->shape;
        t.node->value = node->value;
        return t;
    }

private:
    void require_2d(const char* what) const {
        if (node->shape.size() != 2) {
            throw std::invalid_argument(std::string(what) + ": tensor " +
                                        shape_str(node->shape) + " is not 2-d");
        }
    }
};

template <typename T>
using ParamMap = std::map<std::string, Tensor<T>>;

namespace detail {

template <typename T>
using EMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<EMat<T>>;
template <typename T>
using MapConst = Eigen::Map<const EMat<T>>;

// wires parents + backprop onto `out`; skips both when no parent needs grad
template <typename T>
void attach(Tensor<T>& out, std::vector<std::shared_ptr<TensorNode<T>>> parents,
            std::function<void(TensorNode<T>&)> backprop) {
    bool needs = false;
    for (const auto& p : parents) {
        needs |= p->requires_grad;
    }
    if (!needs) {
        return;
    }
    out.node->requires_grad = true;
    out.node->parents = std::move(parents);
    out.node->backprop = std::move(backprop);
}

template <typename T>
void check_same_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape()) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                    shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise ops

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_same_shape("add", a, b);
    Tensor<T> out(a.shape());
    for (size_t i = 0; i < a.numel(); ++i) {
        out.data()[i] = a.data()[i] + b.data()[i];
    }
    detail::attach<T>(out, {a.node, b.node}, [an = a.node, bn = b.node](TensorNode<T>& o) {
        if (an->requires_grad) {
            an->ensure_grad();
            for (size_t i = 0; i < o.grad.size(); ++i) an->grad[i] += o.grad[i];
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (size_t i = 0; i < o.grad.size(); ++i) bn->grad[i] += o.grad[i];
        }
    });
    return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_same_shape("sub", a, b);
    Tensor<T> out(a.shape());
    for (size_t i = 0; i < a.numel(); ++i) {
        out.data()[i] = a.data()[i] - b.data()[i];
    }
    detail::attach<T>(out, {a.node, b.node}, [an = a.node, bn = b.node](TensorNode<T>& o) {
        if (an->requires_grad) {
            an->ensure_grad();
            for (size_t i = 0; i < o.grad.size(); ++i) an->grad[i] += o.grad[i];
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (size_t i = 0; i < o.grad.size(); ++i) bn->grad[i] -= o.grad[i];
        }
    });
    return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_same_shape("mul", a, b);
    Tensor<T> out(a.shape());
    for (size_t i = 0; i < a.numel(); ++i) {
        out.data()[i] = a.data()[i] * b.data()[i];
    }
    detail::attach<T>(out, {a.node, b.node}, [an = a.node, bn = b.node](TensorNode<T>& o) {
        if (an->requires_grad) {
            an->ensure_grad();
            for (size_t i = 0; i < o.grad.size(); ++i) an->grad[i] += o.grad[i] * bn->value[i];
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (size_t i = 0; i < o.grad.size(); ++i) bn->grad[i] += o.grad[i] * an->value[i];
        }
    });
    return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T c) {
    Tensor<T> out(a.shape());
    for (size_t i = 0; i < a.numel(); ++i) {
        out.data()[i] = a.data()[i] * c;
    }
    detail::attach<T>(out, {a.node}, [an = a.node, c](TensorNode<T>& o) {
        an->ensure_grad();
        for (size_t i = 0; i < o.grad.size(); ++i) an->grad[i] += o.grad[i] * c;
    });
    return out;
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T c) {
    Tensor<T> out(a.shape());
    for (size_t i = 0; i < a.numel(); ++i) {
        out.data()[i] = a.data()[i] + c;
    }
    detail::attach<T>(out, {a.node}, [an = a.node](TensorNode<T>& o) {
        an->ensure_grad();
        for (size_t i = 0; i < o.grad.size(); ++i) an->grad[i] += o.grad[i];
    });
    return out;
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& a) {
    constexpr T kC = T(0.7978845608028654);  // sqrt(2/pi)
    constexpr T kA = T(0.044715);
    Tensor<T> out(a.shape());
    for (size_t i = 0; i < a.numel(); ++i) {
        T x = a.data()[i];
        T u = kC * (x + kA * x * x * x);
        out.data()[i] = T(0.5) * x * (T(1) + std::tanh(u));
    }
    detail::attach<T>(out, {a.node}, [an = a.node](TensorNode<T>& o) {
        an->ensure_grad();
        for (size_t i = 0; i < o.grad.size(); ++i) {
            T x = an->value[i];
            T u = kC * (x + kA * x * x * x);
            T th = std::tanh(u);
            T sech2 = T(1) - th * th;
            T dy = T(0.5) * (T(1) + th) + T(0.5) * x * sech2 * kC * (T(1) + T(3) * kA * x * x);
            an->grad[i] += o.grad[i] * dy;
        }
    });
    return out;
}

template <typename T>
Tensor<T> log_op(const Tensor<T>& a) {
    Tensor<T> out(a.shape());
    for (size_t i = 0; i < a.numel(); ++i) {
        out.data()[i] = std::log(a.data()[i]);
    }
    detail::attach<T>(out, {a.node}, [an = a.node](TensorNode<T>& o) {
        an->ensure_grad();
        for (size_t i = 0; i < o.grad.size(); ++i) {
            an->grad[i] += o.grad[i] / an->value[i];
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// matrix ops

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.shape()[1] != b.shape()[0]) {
        throw std::invalid_argument("matmul: incompatible shapes " + shape_str(a.shape()) +
                                    " x " + shape_str(b.shape()));
    }
    const size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    Tensor<T> out({m, n});
    {
        detail::MapConst<T> A(a.data(), m, k), B(b.data(), k, n);
        detail::MapMat<T> C(out.data(), m, n);
        C.noalias() = A * B;
    }
    detail::attach<T>(out, {a.node, b.node}, [an = a.node, bn = b.node, m, k, n](TensorNode<T>& o) {
        detail::MapConst<T> G(o.grad.data(), m, n);
        if (an->requires_grad) {
            an->ensure_grad();
            detail::MapMat<T> GA(an->grad.data(), m, k);
            detail::MapConst<T> B(bn->value.data(), k, n);
            GA.noalias() += G * B.transpose();
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            detail::MapMat<T> GB(bn->grad.data(), k, n);
            detail::MapConst<T> A(an->value.data(), m, k);
            GB.noalias() += A.transpose() * G;
        }
    });
    return out;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
    const size_t m = a.rows(), n = a.cols();
    Tensor<T> out({n, m});
    for (size_t i = 0; i < m; ++i) {
        for (size_t j = 0; j < n; ++j) {
            out.data()[j * m + i] = a.data()[i * n + j];
        }
    }
    detail::attach<T>(out, {a.node}, [an = a.node, m, n](TensorNode<T>& o) {
        an->ensure_grad();
        for (size_t i = 0; i < m; ++i) {
            for (size_t j = 0; j < n; ++j) {
                an->grad[i * n + j] += o.grad[j * m + i];
            }
        }
    });
    return out;
}

// softmax over the last axis of a 2-d tensor; max-subtraction stabilized
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& a) {
    const size_t m = a.rows(), n = a.cols();
    Tensor<T> out({m, n});
    for (size_t i = 0; i < m; ++i) {
        if (n == 0) continue;
        const T* row = a.data() + i * n;
        T* orow = out.data() + i * n;
        T mx = row[0];
        for (size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
        T sum = T(0);
        for (size_t j = 0; j < n; ++j) {
            orow[j] = std::exp(row[j] - mx);
            sum += orow[j];
        }
        for (size_t j = 0; j < n; ++j) orow[j] /= sum;
    }
    detail::attach<T>(out, {a.node}, [an = a.node, m, n](TensorNode<T>& o) {
        an->ensure_grad();
        for (size_t i = 0; i < m; ++i) {
            const T* y = o.value.data() + i * n;
            const T* g = o.grad.data() + i * n;
            T dot = T(0);
            for (size_t j = 0; j < n; ++j) dot += y[j] * g[j];
            for (size_t j = 0; j < n; ++j) {
                an->grad[i * n + j] += y[j] * (g[j] - dot);
            }
        }
    });
    return out;
}

// layer norm over the last axis of a 2-d tensor with learned gain/bias
template <typename T>
Tensor<T> layer_norm_rows(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias,
                          T eps = T(1e-5)) {
    const size_t m = x.rows(), n = x.cols();
    if (gain.numel() != n || bias.numel() != n) {
        throw std::invalid_argument("layer_norm: gain/bias " + shape_str(gain.shape()) + "/" +
                                    shape_str(bias.shape()) + " do not match row width " +
                                    std::to_string(n));
    }
    Tensor<T> out({m, n});
    for (size_t i = 0; i < m; ++i) {
        const T* row = x.data() + i * n;
        T* orow = out.data() + i * n;
        T mu = T(0);
        for (size_t j = 0; j < n; ++j) mu += row[j];
        mu /= T(n);
        T var = T(0);
        for (size_t j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
        var /= T(n);
        T istd = T(1) / std::sqrt(var + eps);
        for (size_t j = 0; j < n; ++j) {
            orow[j] = (row[j] - mu) * istd * gain.data()[j] + bias.data()[j];
        }
    }
    detail::attach<T>(out, {x.node, gain.node, bias.node},
                      [xn = x.node, gn = gain.node, bn = bias.node, m, n, eps](TensorNode<T>& o) {
                          if (xn->requires_grad) xn->ensure_grad();
                          if (gn->requires_grad) gn->ensure_grad();
                          if (bn->requires_grad) bn->ensure_grad();
                          for (size_t i = 0; i < m; ++i) {
                              const T* row = xn->value.data() + i * n;
                              const T* g = o.grad.data() + i * n;
                              T mu = T(0);
                              for (size_t j = 0; j < n; ++j) mu += row[j];
                              mu /= T(n);
                              T var = T(0);
                              for (size_t j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
                              var /= T(n);
                              T istd = T(1) / std::sqrt(var + eps);
                              if (gn->requires_grad || bn->requires_grad) {
                                  for (size_t j = 0; j < n; ++j) {
                                      T xhat = (row[j] - mu) * istd;
                                      if (gn->requires_grad) gn->grad[j] += g[j] * xhat;
                                      if (bn->requires_grad) bn->grad[j] += g[j];
                                  }
                              }
                              if (!xn->requires_grad) continue;
                              // dxhat = g * gain; dx via mean/var chain
                              T sum_dx = T(0), sum_dx_xhat = T(0);
                              for (size_t j = 0; j < n; ++j) {
                                  T dxhat = g[j] * gn->value[j];
                                  T xhat = (row[j] - mu) * istd;
                                  sum_dx += dxhat;
                                  sum_dx_xhat += dxhat * xhat;
                              }
                              for (size_t j = 0; j < n; ++j) {
                                  T dxhat = g[j] * gn->value[j];
                                  T xhat = (row[j] - mu) * istd;
                                  xn->grad[i * n + j] +=
                                      istd * (dxhat - sum_dx / T(n) - xhat * sum_dx_xhat / T(n));
                              }
                          }
                      });
    return out;
}

// broadcast add of a length-n vector onto every row of [m, n]
template <typename T>
Tensor<T> add_rowvec(const Tensor<T>& a, const Tensor<T>& v) {
    const size_t m = a.rows(), n = a.cols();
    if (v.numel() != n) {
        throw std::invalid_argument("add_rowvec: vector " + shape_str(v.shape()) +
                                    " does not match row width " + std::to_string(n));
    }
    Tensor<T> out({m, n});
    for (size_t i = 0; i < m; ++i) {
        for (size_t j = 0; j < n; ++j) {
            out.data()[i * n + j] = a.data()[i * n + j] + v.data()[j];
        }
    }
    detail::attach<T>(out, {a.node, v.node}, [an = a.node, vn = v.node, m, n](TensorNode<T>& o) {
        if (an->requires_grad) {
            an->ensure_grad();
            for (size_t i = 0; i < o.grad.size(); ++i) an->grad[i] += o.grad[i];
        }
        if (vn->requires_grad) {
            vn->ensure_grad();
            for (size_t i = 0; i < m; ++i) {
                for (size_t j = 0; j < n; ++j) vn->grad[j] += o.grad[i * n + j];
            }
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// shape ops

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, std::vector<size_t> shape) {
    if (shape_numel(shape) != a.numel()) {
        throw std::invalid_argument("reshape: cannot view " + shape_str(a.shape()) + " as " +
                                    shape_str(shape));
    }
    Tensor<T> out(std::move(shape), a.values());
    detail::attach<T>(out, {a.node}, [an = a.node](TensorNode<T>& o) {
        an->ensure_grad();
        for (size_t i = 0; i < o.grad.size(); ++i) an->grad[i] += o.grad[i];
    });
    return out;
}

// concatenate along axis 0; trailing dims must match
template <typename T>
Tensor<T> concat_rows(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.ndim() != b.ndim() || a.ndim() == 0 ||
        !std::equal(a.shape().begin() + 1, a.shape().end(), b.shape().begin() + 1)) {
        throw std::invalid_argument("concat_rows: incompatible shapes " + shape_str(a.shape()) +
                                    " vs " + shape_str(b.shape()));
    }
    std::vector<size_t> shape = a.shape();
    shape[0] += b.shape()[0];
    Tensor<T> out(shape);
    std::copy(a.data(), a.data() + a.numel(), out.data());
    std::copy(b.data(), b.data() + b.numel(), out.data() + a.numel());
    detail::attach<T>(out, {a.node, b.node},
                      [an = a.node, bn = b.node, na = a.numel()](TensorNode<T>& o) {
                          if (an->requires_grad) {
                              an->ensure_grad();
                              for (size_t i = 0; i < na; ++i) an->grad[i] += o.grad[i];
                          }
                          if (bn->requires_grad) {
                              bn->ensure_grad();
                              for (size_t i = na; i < o.grad.size(); ++i)
                                  bn->grad[i - na] += o.grad[i];
                          }
                      });
    return out;
}

// rows [r0, r0+len) along axis 0
template <typename T>
Tensor<T> slice_rows(const Tensor<T>& a, size_t r0, size_t len) {
    if (a.ndim() == 0 || r0 + len > a.shape()[0]) {
        throw std::invalid_argument("slice_rows: [" + std::to_string(r0) + "," +
                                    std::to_string(r0 + len) + ") out of range for " +
                                    shape_str(a.shape()));
    }
    std::vector<size_t> shape = a.shape();
    shape[0] = len;
    size_t stride = a.shape()[0] ? a.numel() / a.shape()[0] : 0;
    Tensor<T> out(shape);
    std::copy(a.data() + r0 * stride, a.data() + (r0 + len) * stride, out.data());
    detail::attach<T>(out, {a.node}, [an = a.node, r0, stride](TensorNode<T>& o) {
        an->ensure_grad();
        for (size_t i = 0; i < o.grad.size(); ++i) an->grad[r0 * stride + i] += o.grad[i];
    });
    return out;
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& a, size_t c0, size_t len) {
    const size_t m = a.rows(), n = a.cols();
    if (c0 + len > n) {
        throw std::invalid_argument("slice_cols: [" + std::to_string(c0) + "," +
                                    std::to_string(c0 + len) + ") out of range for " +
                                    shape_str(a.shape()));
    }
    Tensor<T> out({m, len});
    for (size_t i = 0; i < m; ++i) {
        std::copy(a.data() + i * n + c0, a.data() + i * n + c0 + len, out.data() + i * len);
    }
    detail::attach<T>(out, {a.node}, [an = a.node, m, n, c0, len](TensorNode<T>& o) {
        an->ensure_grad();
        for (size_t i = 0; i < m; ++i) {
            for (size_t j = 0; j < len; ++j) {
                an->grad[i * n + c0 + j] += o.grad[i * len + j];
            }
        }
    });
    return out;
}

template <typename T>
Tensor<T> concat_cols(const Tensor<T>& a, const Tensor<T>& b) {
    const size_t m = a.rows(), na = a.cols(), nb = b.cols();
    if (b.rows() != m) {
        throw std::invalid_argument("concat_cols: incompatible shapes " + shape_str(a.shape()) +
                                    " vs " + shape_str(b.shape()));
    }
    Tensor<T> out({m, na + nb});
    for (size_t i = 0; i < m; ++i) {
        std::copy(a.data() + i * na, a.data() + (i + 1) * na, out.data() + i * (na + nb));
        std::copy(b.data() + i * nb, b.data() + (i + 1) * nb, out.data() + i * (na + nb) + na);
    }
    detail::attach<T>(out, {a.node, b.node},
                      [an = a.node, bn = b.node, m, na, nb](TensorNode<T>& o) {
                          if (an->requires_grad) an->ensure_grad();
                          if (bn->requires_grad) bn->ensure_grad();
                          for (size_t i = 0; i < m; ++i) {
                              const T* g = o.grad.data() + i * (na + nb);
                              if (an->requires_grad) {
                                  for (size_t j = 0; j < na; ++j) an->grad[i * na + j] += g[j];
                              }
                              if (bn->requires_grad) {
                                  for (size_t j = 0; j < nb; ++j) bn->grad[i * nb + j] += g[na + j];
                              }
                          }
                      });
    return out;
}

// out[i] = x[index[i]]; index must be a bijection when used for layout moves
template <typename T>
Tensor<T> gather_flat(const Tensor<T>& x, std::shared_ptr<const std::vector<size_t>> index,
                      std::vector<size_t> shape) {
    if (shape_numel(shape) != index->size()) {
        throw std::invalid_argument("gather_flat: index size " + std::to_string(index->size()) +
                                    " does not match shape " + shape_str(shape));
    }
    Tensor<T> out(std::move(shape));
    for (size_t i = 0; i < index->size(); ++i) {
        out.data()[i] = x.data()[(*index)[i]];
    }
    detail::attach<T>(out, {x.node}, [xn = x.node, index](TensorNode<T>& o) {
        xn->ensure_grad();
        for (size_t i = 0; i < index->size(); ++i) {
            xn->grad[(*index)[i]] += o.grad[i];
        }
    });
    return out;
}

// row gather from an embedding table; duplicate ids accumulate on backward
template <typename T>
Tensor<T> embedding_rows(const Tensor<T>& table, const std::vector<int>& ids) {
    const size_t v = table.rows(), d = table.cols();
    for (int id : ids) {
        if (id < 0 || static_cast<size_t>(id) >= v) {
            throw std::invalid_argument("embedding_rows: id " + std::to_string(id) +
                                        " out of range for table " + shape_str(table.shape()));
        }
    }
    Tensor<T> out({ids.size(), d});
    for (size_t i = 0; i < ids.size(); ++i) {
        std::copy(table.data() + ids[i] * d, table.data() + (ids[i] + 1) * d, out.data() + i * d);
    }
    detail::attach<T>(out, {table.node}, [tn = table.node, ids, d](TensorNode<T>& o) {
        tn->ensure_grad();
        for (size_t i = 0; i < ids.size(); ++i) {
            for (size_t j = 0; j < d; ++j) {
                tn->grad[ids[i] * d + j] += o.grad[i * d + j];
            }
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// reductions

template <typename T>
Tensor<T> sum_all(const Tensor<T>& a) {
    T s = T(0);
    for (size_t i = 0; i < a.numel(); ++i) s += a.data()[i];
    Tensor<T> out = Tensor<T>::scalar(s);
    detail::attach<T>(out, {a.node}, [an = a.node](TensorNode<T>& o) {
        an->ensure_grad();
        for (size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += o.grad[0];
    });
    return out;
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& a) {
    if (a.numel() == 0) {
        throw std::invalid_argument("mean_all: empty tensor");
    }
    T s = T(0);
    for (size_t i = 0; i < a.numel(); ++i) s += a.data()[i];
    const T inv = T(1) / T(a.numel());
    Tensor<T> out = Tensor<T>::scalar(s * inv);
    detail::attach<T>(out, {a.node}, [an = a.node, inv](TensorNode<T>& o) {
        an->ensure_grad();
        for (size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += o.grad[0] * inv;
    });
    return out;
}

// x @ w + b in one call
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
    return add_rowvec(matmul(x, w), b);
}

// ---------------------------------------------------------------------------
// backward

// Populates .grad on every requires_grad tensor reachable from `loss`.
// Repeated calls accumulate into existing leaf grads (op outputs get fresh
// scratch grads each pass); call zero_grad to reset between steps.
template <typename T>
void backward(const Tensor<T>& loss) {
    if (loss.numel() != 1) {
        throw std::invalid_argument("backward: loss must be scalar, got " +
                                    shape_str(loss.shape()));
    }
    if (!loss.node->requires_grad) {
        return;  // nothing reachable requires grad
    }
    // iterative post-order DFS over requires_grad subgraph
    std::vector<TensorNode<T>*> order;
    std::unordered_set<TensorNode<T>*> visited;
    std::vector<std::pair<TensorNode<T>*, size_t>> stack;
    stack.emplace_back(loss.node.get(), 0);
    visited.insert(loss.node.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            TensorNode<T>* p = node->parents[next++].get();
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    // interior grads are scratch for this pass; only leaves accumulate
    for (TensorNode<T>* node : order) {
        if (node->backprop) {
            node->grad.assign(node->value.size(), T(0));
        }
    }
    loss.node->ensure_grad();
    loss.node->grad[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorNode<T>* node = *it;
        if (node->backprop && node->grad.size() == node->value.size()) {
            node->backprop(*node);
        }
    }
}

}  // namespace refedit

#endif  // REFEDIT_TENSOR_HPP
