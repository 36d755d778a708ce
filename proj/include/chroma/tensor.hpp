#pragma once

// Dense float32 tensors with reverse-mode automatic differentiation on a
// define-by-run gradient tape. A tape is active while a GradTape object is in
// scope; operations executed without an active tape compute values only
// (inference mode). Reductions accumulate in float64.
//
// Broadcasting is restricted to scalar-with-tensor and equal shapes. A tape
// and the tensors recorded on it belong to one thread.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace chroma {

using Shape = std::vector<int>;

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << "]";
    return os.str();
}

inline size_t shape_numel(const Shape& s) {
    size_t n = 1;
    for (int d : s) {
        if (d < 0) throw std::invalid_argument("negative extent in shape " + shape_str(s));
        n *= size_t(d);
    }
    return n;
}

class GradTape;

struct TensorNode {
    Shape shape;
    std::vector<float> value;
    std::vector<float> grad;  // empty until backward touches this node
    bool requires_grad = false;
    GradTape* tape = nullptr;
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(TensorNode&)> backprop;

    size_t numel() const { return value.size(); }
    float* grad_buf() {
        if (grad.empty()) grad.assign(value.size(), 0.0f);
        return grad.data();
    }
};

class GradTape {
public:
    GradTape() : prev_(active_) { active_ = this; }
    ~GradTape() { active_ = prev_; }
    GradTape(const GradTape&) = delete;
    GradTape& operator=(const GradTape&) = delete;

    static GradTape* active() { return active_; }

    void record(std::shared_ptr<TensorNode> n) {
        n->tape = this;
        nodes_.push_back(std::move(n));
    }
    std::vector<std::shared_ptr<TensorNode>>& nodes() { return nodes_; }
    bool consumed() const { return consumed_; }
    void mark_consumed() { consumed_ = true; }

private:
    GradTape* prev_;
    std::vector<std::shared_ptr<TensorNode>> nodes_;
    bool consumed_ = false;
    inline static thread_local GradTape* active_ = nullptr;
};

class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape) { return filled(std::move(shape), 0.0f); }

    static Tensor filled(Shape shape, float v) {
        auto n = std::make_shared<TensorNode>();
        n->value.assign(shape_numel(shape), v);
        n->shape = std::move(shape);
        return Tensor(std::move(n));
    }

    static Tensor from_data(Shape shape, std::vector<float> data) {
        if (shape_numel(shape) != data.size())
            throw std::invalid_argument("from_data: shape " + shape_str(shape) + " does not match " +
                                        std::to_string(data.size()) + " values");
        auto n = std::make_shared<TensorNode>();
        n->shape = std::move(shape);
        n->value = std::move(data);
        return Tensor(std::move(n));
    }

    static Tensor scalar(float v) { return from_data({}, {v}); }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    size_t numel() const { return node_->value.size(); }
    int dim(int i) const { return node_->shape[size_t(i)]; }
    int rank() const { return int(node_->shape.size()); }

    std::vector<float>& data() { return node_->value; }
    const std::vector<float>& data() const { return node_->value; }

    float item() const {
        if (numel() != 1) throw std::logic_error("item: tensor " + shape_str(shape()) + " is not scalar");
        return node_->value[0];
    }
    float at(int i, int j) const { return node_->value[size_t(i) * dim(1) + j]; }

    bool requires_grad() const { return node_->requires_grad; }
    Tensor& set_requires_grad(bool b = true) {
        node_->requires_grad = b;
        return *this;
    }
    bool has_grad() const { return !node_->grad.empty(); }
    const std::vector<float>& grad() const {
        if (node_->grad.empty()) throw std::logic_error("grad: no gradient populated");
        return node_->grad;
    }
    void zero_grad() {
        if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0f);
    }

    std::shared_ptr<TensorNode>& node() { return node_; }
    const std::shared_ptr<TensorNode>& node() const { return node_; }

private:
    explicit Tensor(std::shared_ptr<TensorNode> n) : node_(std::move(n)) {}
    std::shared_ptr<TensorNode> node_;
    friend Tensor make_op(Shape, std::vector<float>, std::vector<Tensor>,
                          std::function<void(TensorNode&)>);
};

// Builds an op result; records it on the active tape when gradients can flow.
inline Tensor make_op(Shape shape, std::vector<float> value, std::vector<Tensor> parents,
                      std::function<void(TensorNode&)> backprop) {
    auto n = std::make_shared<TensorNode>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    GradTape* tape = GradTape::active();
    bool needs_grad = false;
    for (const auto& p : parents) needs_grad = needs_grad || p.requires_grad();
    if (tape && needs_grad) {
        n->requires_grad = true;
        for (auto& p : parents) n->parents.push_back(p.node());
        n->backprop = std::move(backprop);
        Tensor out(n);
        tape->record(std::move(n));
        return out;
    }
    return Tensor(std::move(n));
}

namespace detail {

// C[m x n] += A[m x k] * B[k x n], all row-major, contiguous inner loops.
inline void mm_nn_acc(const float* A, const float* B, float* C, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const float* a = A + size_t(i) * k;
        float* c = C + size_t(i) * n;
        for (int kk = 0; kk < k; ++kk) {
            const float av = a[kk];
            const float* b = B + size_t(kk) * n;
            for (int j = 0; j < n; ++j) c[j] += av * b[j];
        }
    }
}

// C[k x n] += A^T[k x m reading A m x k] * B[m x n]
inline void mm_tn_acc(const float* A, const float* B, float* C, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const float* a = A + size_t(i) * k;
        const float* b = B + size_t(i) * n;
        for (int kk = 0; kk < k; ++kk) {
            const float av = a[kk];
            float* c = C + size_t(kk) * n;
            for (int j = 0; j < n; ++j) c[j] += av * b[j];
        }
    }
}

inline std::vector<float> transpose2d(const float* a, int m, int n) {
    std::vector<float> t(size_t(m) * n);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) t[size_t(j) * m + i] = a[size_t(i) * n + j];
    return t;
}

inline void check_rank2(const Tensor& t, const char* who) {
    if (t.rank() != 2)
        throw std::invalid_argument(std::string(who) + ": expected rank-2 tensor, got " + shape_str(t.shape()));
}

}  // namespace detail

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    detail::check_rank2(a, "matmul");
    detail::check_rank2(b, "matmul");
    int m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
    if (k != k2)
        throw std::invalid_argument("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " vs " +
                                    shape_str(b.shape()));
    std::vector<float> out(size_t(m) * n, 0.0f);
    detail::mm_nn_acc(a.data().data(), b.data().data(), out.data(), m, k, n);
    auto an = a.node(), bn = b.node();
    return make_op({m, n}, std::move(out), {a, b}, [an, bn, m, k, n](TensorNode& self) {
        const float* g = self.grad.data();
        if (an->requires_grad) {
            // dA += dC * B^T; materialize B^T so the kernel stays contiguous
            auto bt = detail::transpose2d(bn->value.data(), k, n);
            detail::mm_nn_acc(g, bt.data(), an->grad_buf(), m, n, k);
        }
        if (bn->requires_grad) detail::mm_tn_acc(an->value.data(), g, bn->grad_buf(), m, k, n);
    });
}

namespace detail {

enum class BinKind { add, sub, mul };

inline Tensor binary_op(BinKind kind, const Tensor& a, const Tensor& b) {
    const bool a_scalar = a.numel() == 1, b_scalar = b.numel() == 1;
    if (!(a.shape() == b.shape() || a_scalar || b_scalar))
        throw std::invalid_argument("elementwise: shapes not broadcastable, " + shape_str(a.shape()) +
                                    " vs " + shape_str(b.shape()));
    const Shape& out_shape = a_scalar ? b.shape() : a.shape();
    size_t n = std::max(a.numel(), b.numel());
    std::vector<float> out(n);
    const float* pa = a.data().data();
    const float* pb = b.data().data();
    const size_t sa = a_scalar ? 0 : 1, sb = b_scalar ? 0 : 1;
    switch (kind) {
        case BinKind::add:
            for (size_t i = 0; i < n; ++i) out[i] = pa[i * sa] + pb[i * sb];
            break;
        case BinKind::sub:
            for (size_t i = 0; i < n; ++i) out[i] = pa[i * sa] - pb[i * sb];
            break;
        case BinKind::mul:
            for (size_t i = 0; i < n; ++i) out[i] = pa[i * sa] * pb[i * sb];
            break;
    }
    auto an = a.node(), bn = b.node();
    return make_op(out_shape, std::move(out), {a, b}, [kind, an, bn, n, sa, sb](TensorNode& self) {
        const float* g = self.grad.data();
        if (an->requires_grad) {
            float* ga = an->grad_buf();
            for (size_t i = 0; i < n; ++i) {
                float d = g[i];
                if (kind == BinKind::mul) d *= bn->value[i * sb];
                ga[i * sa] += d;
            }
        }
        if (bn->requires_grad) {
            float* gb = bn->grad_buf();
            for (size_t i = 0; i < n; ++i) {
                float d = g[i];
                if (kind == BinKind::sub) d = -d;
                if (kind == BinKind::mul) d = g[i] * an->value[i * sa];
                gb[i * sb] += d;
            }
        }
    });
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) { return detail::binary_op(detail::BinKind::add, a, b); }
inline Tensor sub(const Tensor& a, const Tensor& b) { return detail::binary_op(detail::BinKind::sub, a, b); }
inline Tensor mul(const Tensor& a, const Tensor& b) { return detail::binary_op(detail::BinKind::mul, a, b); }
inline Tensor add(const Tensor& a, float c) { return add(a, Tensor::scalar(c)); }
inline Tensor sub(const Tensor& a, float c) { return sub(a, Tensor::scalar(c)); }
inline Tensor mul(const Tensor& a, float c) { return mul(a, Tensor::scalar(c)); }
inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

namespace detail {

template <class Fwd, class Bwd>
Tensor unary_op(const Tensor& a, Fwd fwd, Bwd bwd_from_xy) {
    size_t n = a.numel();
    std::vector<float> out(n);
    const float* pa = a.data().data();
    for (size_t i = 0; i < n; ++i) out[i] = fwd(pa[i]);
    auto an = a.node();
    auto self_shape = a.shape();
    return make_op(self_shape, std::move(out), {a}, [an, n, bwd_from_xy](TensorNode& self) {
        if (!an->requires_grad) return;
        float* ga = an->grad_buf();
        const float* g = self.grad.data();
        const float* x = an->value.data();
        const float* y = self.value.data();
        for (size_t i = 0; i < n; ++i) ga[i] += g[i] * bwd_from_xy(x[i], y[i]);
    });
}

}  // namespace detail

inline Tensor exp(const Tensor& a) {
    return detail::unary_op(
        a, [](float x) { return std::exp(x); }, [](float, float y) { return y; });
}

inline Tensor log(const Tensor& a) {
    for (float x : a.data())
        if (!(x > 0.0f)) throw std::domain_error("log: non-positive input " + std::to_string(x));
    return detail::unary_op(
        a, [](float x) { return std::log(x); }, [](float x, float) { return 1.0f / x; });
}

inline Tensor tanh(const Tensor& a) {
    return detail::unary_op(
        a, [](float x) { return std::tanh(x); }, [](float, float y) { return 1.0f - y * y; });
}

inline Tensor relu(const Tensor& a) {
    return detail::unary_op(
        a, [](float x) { return x > 0.0f ? x : 0.0f; },
        [](float x, float) { return x > 0.0f ? 1.0f : 0.0f; });
}

inline Tensor sigmoid(const Tensor& a) {
    return detail::unary_op(
        a,
        [](float x) {
            if (x >= 0.0f) return 1.0f / (1.0f + std::exp(-x));
            float e = std::exp(x);
            return e / (1.0f + e);
        },
        [](float, float y) { return y * (1.0f - y); });
}

namespace detail {

inline void check_axis(const Tensor& t, int axis, const char* who) {
    if (axis < 0 || axis >= t.rank())
        throw std::invalid_argument(std::string(who) + ": axis " + std::to_string(axis) +
                                    " out of range for " + shape_str(t.shape()));
}

struct AxisSplit {
    size_t outer = 1, axis_n = 1, inner = 1;
};
inline AxisSplit split_axis(const Shape& s, int axis) {
    AxisSplit sp;
    for (int i = 0; i < axis; ++i) sp.outer *= size_t(s[size_t(i)]);
    sp.axis_n = size_t(s[size_t(axis)]);
    for (size_t i = size_t(axis) + 1; i < s.size(); ++i) sp.inner *= size_t(s[i]);
    return sp;
}
inline Shape drop_axis(const Shape& s, int axis) {
    Shape out;
    for (int i = 0; i < int(s.size()); ++i)
        if (i != axis) out.push_back(s[size_t(i)]);
    return out;
}

}  // namespace detail

inline Tensor sum(const Tensor& t) {
    double acc = 0.0;
    for (float v : t.data()) acc += v;
    auto tn = t.node();
    size_t n = t.numel();
    return make_op({}, {float(acc)}, {t}, [tn, n](TensorNode& self) {
        if (!tn->requires_grad) return;
        float g = self.grad[0];
        float* gt = tn->grad_buf();
        for (size_t i = 0; i < n; ++i) gt[i] += g;
    });
}

inline Tensor sum(const Tensor& t, int axis) {
    detail::check_axis(t, axis, "sum");
    auto sp = detail::split_axis(t.shape(), axis);
    std::vector<double> acc(sp.outer * sp.inner, 0.0);
    const float* p = t.data().data();
    for (size_t o = 0; o < sp.outer; ++o)
        for (size_t a = 0; a < sp.axis_n; ++a) {
            const float* row = p + (o * sp.axis_n + a) * sp.inner;
            double* dst = acc.data() + o * sp.inner;
            for (size_t i = 0; i < sp.inner; ++i) dst[i] += row[i];
        }
    std::vector<float> out(acc.begin(), acc.end());
    auto tn = t.node();
    return make_op(detail::drop_axis(t.shape(), axis), std::move(out), {t}, [tn, sp](TensorNode& self) {
        if (!tn->requires_grad) return;
        float* gt = tn->grad_buf();
        const float* g = self.grad.data();
        for (size_t o = 0; o < sp.outer; ++o)
            for (size_t a = 0; a < sp.axis_n; ++a) {
                float* row = gt + (o * sp.axis_n + a) * sp.inner;
                const float* src = g + o * sp.inner;
                for (size_t i = 0; i < sp.inner; ++i) row[i] += src[i];
            }
    });
}

inline Tensor mean(const Tensor& t) {
    if (t.numel() == 0) throw std::invalid_argument("mean: empty tensor");
    return mul(sum(t), 1.0f / float(t.numel()));
}

inline Tensor mean(const Tensor& t, int axis) {
    detail::check_axis(t, axis, "mean");
    return mul(sum(t, axis), 1.0f / float(t.dim(axis)));
}

// max reduction; gradient routes to the first-encountered argmax.
inline Tensor max(const Tensor& t) {
    if (t.numel() == 0) throw std::invalid_argument("max: empty tensor");
    size_t arg = 0;
    float best = t.data()[0];
    for (size_t i = 1; i < t.numel(); ++i)
        if (t.data()[i] > best) { best = t.data()[i]; arg = i; }
    auto tn = t.node();
    return make_op({}, {best}, {t}, [tn, arg](TensorNode& self) {
        if (tn->requires_grad) tn->grad_buf()[arg] += self.grad[0];
    });
}

inline Tensor max(const Tensor& t, int axis) {
    detail::check_axis(t, axis, "max");
    auto sp = detail::split_axis(t.shape(), axis);
    if (sp.axis_n == 0) throw std::invalid_argument("max: empty axis");
    std::vector<float> out(sp.outer * sp.inner);
    std::vector<size_t> args(sp.outer * sp.inner);
    const float* p = t.data().data();
    for (size_t o = 0; o < sp.outer; ++o)
        for (size_t i = 0; i < sp.inner; ++i) {
            size_t base = o * sp.axis_n * sp.inner + i;
            float best = p[base];
            size_t arg = base;
            for (size_t a = 1; a < sp.axis_n; ++a) {
                size_t idx = base + a * sp.inner;
                if (p[idx] > best) { best = p[idx]; arg = idx; }
            }
            out[o * sp.inner + i] = best;
            args[o * sp.inner + i] = arg;
        }
    auto tn = t.node();
    return make_op(detail::drop_axis(t.shape(), axis), std::move(out), {t},
                   [tn, args = std::move(args)](TensorNode& self) {
                       if (!tn->requires_grad) return;
                       float* gt = tn->grad_buf();
                       for (size_t i = 0; i < args.size(); ++i) gt[args[i]] += self.grad[i];
                   });
}

// Columns [c0, c1) of a rank-2 tensor. Slicing is the partition mechanism for
// latent subspaces, so its backward writes exact zeros outside the slice.
inline Tensor slice_cols(const Tensor& t, int c0, int c1) {
    detail::check_rank2(t, "slice_cols");
    int m = t.dim(0), n = t.dim(1);
    if (c0 < 0 || c1 > n || c0 >= c1)
        throw std::invalid_argument("slice_cols: range [" + std::to_string(c0) + "," + std::to_string(c1) +
                                    ") invalid for " + shape_str(t.shape()));
    int w = c1 - c0;
    std::vector<float> out(size_t(m) * w);
    const float* p = t.data().data();
    for (int i = 0; i < m; ++i)
        std::copy(p + size_t(i) * n + c0, p + size_t(i) * n + c1, out.begin() + size_t(i) * w);
    auto tn = t.node();
    return make_op({m, w}, std::move(out), {t}, [tn, m, n, c0, w](TensorNode& self) {
        if (!tn->requires_grad) return;
        float* gt = tn->grad_buf();
        const float* g = self.grad.data();
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < w; ++j) gt[size_t(i) * n + c0 + j] += g[size_t(i) * w + j];
    });
}

inline Tensor concat_cols(const Tensor& a, const Tensor& b) {
    detail::check_rank2(a, "concat_cols");
    detail::check_rank2(b, "concat_cols");
    if (a.dim(0) != b.dim(0))
        throw std::invalid_argument("concat_cols: row counts differ, " + shape_str(a.shape()) + " vs " +
                                    shape_str(b.shape()));
    int m = a.dim(0), na = a.dim(1), nb = b.dim(1);
    std::vector<float> out(size_t(m) * (na + nb));
    for (int i = 0; i < m; ++i) {
        std::copy_n(a.data().data() + size_t(i) * na, na, out.begin() + size_t(i) * (na + nb));
        std::copy_n(b.data().data() + size_t(i) * nb, nb, out.begin() + size_t(i) * (na + nb) + na);
    }
    auto an = a.node(), bn = b.node();
    return make_op({m, na + nb}, std::move(out), {a, b}, [an, bn, m, na, nb](TensorNode& self) {
        const float* g = self.grad.data();
        int n = na + nb;
        if (an->requires_grad) {
            float* ga = an->grad_buf();
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < na; ++j) ga[size_t(i) * na + j] += g[size_t(i) * n + j];
        }
        if (bn->requires_grad) {
            float* gb = bn->grad_buf();
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < nb; ++j) gb[size_t(i) * nb + j] += g[size_t(i) * n + na + j];
        }
    });
}

// [1 x n] -> [rows x n]
inline Tensor row_tile(const Tensor& t, int rows) {
    detail::check_rank2(t, "row_tile");
    if (t.dim(0) != 1) throw std::invalid_argument("row_tile: expected a single row, got " + shape_str(t.shape()));
    if (rows < 0) throw std::invalid_argument("row_tile: negative row count");
    int n = t.dim(1);
    std::vector<float> out(size_t(rows) * n);
    for (int i = 0; i < rows; ++i) std::copy_n(t.data().data(), n, out.begin() + size_t(i) * n);
    auto tn = t.node();
    return make_op({rows, n}, std::move(out), {t}, [tn, rows, n](TensorNode& self) {
        if (!tn->requires_grad) return;
        float* gt = tn->grad_buf();
        const float* g = self.grad.data();
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < n; ++j) gt[j] += g[size_t(i) * n + j];
    });
}

inline Tensor reshape(const Tensor& t, Shape shape) {
    if (shape_numel(shape) != t.numel())
        throw std::invalid_argument("reshape: " + shape_str(t.shape()) + " to " + shape_str(shape) +
                                    " changes element count");
    auto tn = t.node();
    std::vector<float> v = t.data();
    return make_op(std::move(shape), std::move(v), {t}, [tn](TensorNode& self) {
        if (!tn->requires_grad) return;
        float* gt = tn->grad_buf();
        for (size_t i = 0; i < self.grad.size(); ++i) gt[i] += self.grad[i];
    });
}

inline void backward(const Tensor& loss) {
    if (loss.numel() != 1)
        throw std::logic_error("backward: loss must be scalar, got " + shape_str(loss.shape()));
    GradTape* tape = loss.node()->tape;
    if (!tape) throw std::logic_error("backward: loss was not produced under an active tape");
    if (tape->consumed()) throw std::logic_error("backward: tape already consumed by a previous backward call");
    loss.node()->grad_buf()[0] = 1.0f;
    auto& nodes = tape->nodes();
    for (auto it = nodes.rbegin(); it != nodes.rend(); ++it) {
        TensorNode& n = **it;
        if (!n.grad.empty() && n.backprop) n.backprop(n);
    }
    tape->mark_consumed();
}

inline void zero_grads(const std::vector<Tensor*>& params) {
    for (Tensor* p : params) p->zero_grad();
}

// Row gather for mini-batching; defined on data tensors only.
inline Tensor gather_rows(const Tensor& t, const std::vector<int>& rows) {
    detail::check_rank2(t, "gather_rows");
    if (t.requires_grad()) throw std::logic_error("gather_rows: data tensors only");
    int n = t.dim(1);
    std::vector<float> out(rows.size() * size_t(n));
    for (size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] < 0 || rows[i] >= t.dim(0)) throw std::out_of_range("gather_rows: row index out of range");
        std::copy_n(t.data().data() + size_t(rows[i]) * n, n, out.begin() + i * size_t(n));
    }
    return Tensor::from_data({int(rows.size()), n}, std::move(out));
}

}  // namespace chroma
