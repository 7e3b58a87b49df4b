#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "latentsafe/gemm.hpp"

// Reverse-mode automatic differentiation over dense tensors. One Tape per
// loss: ops record onto the innermost active tape, backward() runs the
// recorded pulls in reverse creation order and then marks the tape consumed.

namespace latentsafe {

using Shape = std::vector<int>;

inline int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int d : s) {
        if (d <= 0) throw std::invalid_argument("tensor shape has non-positive dimension");
        n *= d;
    }
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

class Tape;
namespace detail {
inline Tape*& active_tape_slot() {
    thread_local Tape* t = nullptr;
    return t;
}
inline uint64_t next_tape_gen() {
    thread_local uint64_t g = 0;
    return ++g;
}
}  // namespace detail

struct Tensor {
    Shape shape;
    std::shared_ptr<std::vector<double>> data;  // immutable once built
    bool requires_grad = false;
    int node = -1;        // index into the tape this tensor was recorded on
    uint64_t tape_gen = 0;

    Tensor() = default;

    int64_t size() const { return data ? static_cast<int64_t>(data->size()) : 0; }
    const double* ptr() const { return data->data(); }
    double* mut_ptr() { return data->data(); }
    double operator[](int64_t i) const { return (*data)[i]; }

    double scalar() const {
        if (size() != 1) throw std::invalid_argument("scalar() on tensor of size " + std::to_string(size()));
        return (*data)[0];
    }

    static Tensor from(Shape shape, std::vector<double> values) {
        if (shape_numel(shape) != static_cast<int64_t>(values.size()))
            throw std::invalid_argument("value count does not match shape " + shape_str(shape));
        Tensor t;
        t.shape = std::move(shape);
        t.data = std::make_shared<std::vector<double>>(std::move(values));
        return t;
    }
    static Tensor zeros(Shape shape) {
        return full(std::move(shape), 0.0);
    }
    static Tensor full(Shape shape, double v) {
        int64_t n = shape_numel(shape);
        Tensor t;
        t.shape = std::move(shape);
        t.data = std::make_shared<std::vector<double>>(n, v);
        return t;
    }
    static Tensor scalar_of(double v) { return full({1}, v); }

    // A detached view: shares storage, carries no graph reference.
    Tensor detached() const {
        Tensor t;
        t.shape = shape;
        t.data = data;
        return t;
    }
};

class Tape {
public:
    Tape() : gen_(detail::next_tape_gen()) {
        prev_ = detail::active_tape_slot();
        detail::active_tape_slot() = this;
    }
    ~Tape() { detail::active_tape_slot() = prev_; }
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    static Tape* active() { return detail::active_tape_slot(); }

    uint64_t gen() const { return gen_; }
    bool consumed() const { return consumed_; }
    size_t num_nodes() const { return nodes_.size(); }

    int add_leaf(int64_t n) {
        check_open();
        nodes_.push_back(Node{n, {}, nullptr, {}});
        return static_cast<int>(nodes_.size()) - 1;
    }

    int add_node(int64_t n, std::vector<int> parents,
                 std::function<void(const double*, Tape&)> pull) {
        check_open();
        int id = static_cast<int>(nodes_.size());
        for (int p : parents)
            if (p < 0 || p >= id) throw std::logic_error("tape parent out of order");
        nodes_.push_back(Node{n, std::move(parents), std::move(pull), {}});
        return id;
    }

    // grad buffer of a node, zero-initialized on first touch
    double* grad_buf(int id) {
        Node& nd = nodes_.at(static_cast<size_t>(id));
        if (nd.grad.empty()) nd.grad.assign(static_cast<size_t>(nd.n), 0.0);
        return nd.grad.data();
    }

    void backward(const Tensor& loss) {
        if (consumed_) throw std::logic_error("backward called twice: tape already consumed");
        if (loss.node < 0 || loss.tape_gen != gen_)
            throw std::invalid_argument("backward target is not recorded on this tape");
        if (loss.size() != 1)
            throw std::invalid_argument("backward requires a scalar loss, got shape " + shape_str(loss.shape));
        std::vector<char> reach(nodes_.size(), 0);
        reach[static_cast<size_t>(loss.node)] = 1;
        grad_buf(loss.node)[0] = 1.0;
        for (int id = loss.node; id >= 0; --id) {
            if (!reach[static_cast<size_t>(id)]) continue;
            Node& nd = nodes_[static_cast<size_t>(id)];
            for (int p : nd.parents) reach[static_cast<size_t>(p)] = 1;
            if (nd.pull) nd.pull(grad_buf(id), *this);
        }
        consumed_ = true;
    }

    // Gradient of a recorded tensor after backward. Unreached nodes read as zero.
    Tensor grad(const Tensor& t) {
        if (!consumed_) throw std::logic_error("grad queried before backward");
        if (t.node < 0 || t.tape_gen != gen_)
            throw std::invalid_argument("grad queried for a tensor not recorded on this tape");
        const Node& nd = nodes_.at(static_cast<size_t>(t.node));
        Tensor g;
        g.shape = t.shape;
        if (nd.grad.empty())
            g.data = std::make_shared<std::vector<double>>(static_cast<size_t>(nd.n), 0.0);
        else
            g.data = std::make_shared<std::vector<double>>(nd.grad);
        return g;
    }

private:
    struct Node {
        int64_t n;
        std::vector<int> parents;
        std::function<void(const double*, Tape&)> pull;
        std::vector<double> grad;
    };

    void check_open() const {
        if (consumed_) throw std::logic_error("recording on a consumed tape");
    }

    std::vector<Node> nodes_;
    bool consumed_ = false;
    uint64_t gen_;
    Tape* prev_ = nullptr;
};

// Suppresses recording while alive: ops run as plain value computations even
// if a tape is open further up the scope.
class NoGrad {
public:
    NoGrad() : prev_(detail::active_tape_slot()) { detail::active_tape_slot() = nullptr; }
    ~NoGrad() { detail::active_tape_slot() = prev_; }
    NoGrad(const NoGrad&) = delete;
    NoGrad& operator=(const NoGrad&) = delete;

private:
    Tape* prev_;
};

// Leaf registration: gives the tensor a node on the active tape so its
// gradient can be read after backward. No-op (returns a detached view) when
// no tape is active or requires_grad is false.
inline Tensor make_leaf(const Tensor& t, bool requires_grad = true) {
    Tensor out = t.detached();
    out.requires_grad = requires_grad;
    Tape* tp = Tape::active();
    if (requires_grad && tp) {
        out.node = tp->add_leaf(out.size());
        out.tape_gen = tp->gen();
    }
    return out;
}

namespace detail {

inline bool tracked(const Tensor& t) {
    Tape* tp = Tape::active();
    return tp && t.node >= 0 && t.tape_gen == tp->gen();
}

// Record an op node whose pull closure is built by `make_pull(parent_ids)`.
// Inputs not recorded on the active tape appear with parent id -1 and must be
// skipped by the closure (they are constants for this graph).
inline Tensor finish_op(Shape shape, std::shared_ptr<std::vector<double>> vals,
                        std::initializer_list<const Tensor*> inputs,
                        const std::function<std::function<void(const double*, Tape&)>(
                            const std::vector<int>&)>& make_pull) {
    Tensor out;
    out.shape = std::move(shape);
    out.data = std::move(vals);
    bool any_rg = false;
    for (const Tensor* in : inputs) any_rg = any_rg || in->requires_grad;
    out.requires_grad = any_rg;
    Tape* tp = Tape::active();
    if (!tp) return out;
    std::vector<int> pids;
    std::vector<int> parents;
    bool any_tracked = false;
    for (const Tensor* in : inputs) {
        if (tracked(*in)) {
            pids.push_back(in->node);
            parents.push_back(in->node);
            any_tracked = true;
        } else {
            pids.push_back(-1);
        }
    }
    if (!any_tracked) return out;
    out.node = tp->add_node(out.size(), std::move(parents), make_pull(pids));
    out.tape_gen = tp->gen();
    return out;
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape != b.shape)
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape) +
                                    " vs " + shape_str(b.shape));
}

}  // namespace detail

// ---- elementwise ----

// a*x + b
inline Tensor affine(const Tensor& x, double a, double b) {
    auto vals = std::make_shared<std::vector<double>>(x.size());
    const double* xp = x.ptr();
    for (int64_t i = 0; i < x.size(); ++i) (*vals)[i] = a * xp[i] + b;
    return detail::finish_op(x.shape, vals, {&x}, [a, n = x.size()](const std::vector<int>& p) {
        return [a, n, px = p[0]](const double* g, Tape& t) {
            if (px < 0) return;
            double* gp = t.grad_buf(px);
            for (int64_t i = 0; i < n; ++i) gp[i] += a * g[i];
        };
    });
}

inline Tensor add(const Tensor& x, const Tensor& y) {
    detail::require_same_shape(x, y, "add");
    auto vals = std::make_shared<std::vector<double>>(x.size());
    const double* xp = x.ptr();
    const double* yp = y.ptr();
    for (int64_t i = 0; i < x.size(); ++i) (*vals)[i] = xp[i] + yp[i];
    return detail::finish_op(x.shape, vals, {&x, &y}, [n = x.size()](const std::vector<int>& p) {
        return [n, px = p[0], py = p[1]](const double* g, Tape& t) {
            if (px >= 0) {
                double* gp = t.grad_buf(px);
                for (int64_t i = 0; i < n; ++i) gp[i] += g[i];
            }
            if (py >= 0) {
                double* gp = t.grad_buf(py);
                for (int64_t i = 0; i < n; ++i) gp[i] += g[i];
            }
        };
    });
}

inline Tensor sub(const Tensor& x, const Tensor& y) { return add(x, affine(y, -1.0, 0.0)); }

inline Tensor mul(const Tensor& x, const Tensor& y) {
    detail::require_same_shape(x, y, "mul");
    auto vals = std::make_shared<std::vector<double>>(x.size());
    const double* xp = x.ptr();
    const double* yp = y.ptr();
    for (int64_t i = 0; i < x.size(); ++i) (*vals)[i] = xp[i] * yp[i];
    return detail::finish_op(x.shape, vals, {&x, &y},
                             [n = x.size(), xd = x.data, yd = y.data](const std::vector<int>& p) {
        return [n, xd, yd, px = p[0], py = p[1]](const double* g, Tape& t) {
            if (px >= 0) {
                double* gp = t.grad_buf(px);
                const double* o = yd->data();
                for (int64_t i = 0; i < n; ++i) gp[i] += g[i] * o[i];
            }
            if (py >= 0) {
                double* gp = t.grad_buf(py);
                const double* o = xd->data();
                for (int64_t i = 0; i < n; ++i) gp[i] += g[i] * o[i];
            }
        };
    });
}

namespace detail {

template <typename F, typename DF>
Tensor unary_op(const Tensor& x, F f, DF dfdx_from_xy) {
    auto vals = std::make_shared<std::vector<double>>(x.size());
    const double* xp = x.ptr();
    for (int64_t i = 0; i < x.size(); ++i) (*vals)[i] = f(xp[i]);
    return finish_op(x.shape, vals, {&x},
                     [n = x.size(), xd = x.data, yd = vals, dfdx_from_xy](const std::vector<int>& p) {
        return [n, xd, yd, dfdx_from_xy, px = p[0]](const double* g, Tape& t) {
            if (px < 0) return;
            double* gp = t.grad_buf(px);
            const double* xv = xd->data();
            const double* yv = yd->data();
            for (int64_t i = 0; i < n; ++i) gp[i] += g[i] * dfdx_from_xy(xv[i], yv[i]);
        };
    });
}

inline double sigmoid_val(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    double e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace detail

inline Tensor relu(const Tensor& x) {
    return detail::unary_op(x, [](double v) { return v > 0 ? v : 0.0; },
                            [](double xv, double) { return xv > 0 ? 1.0 : 0.0; });
}

inline Tensor elu(const Tensor& x) {
    return detail::unary_op(x, [](double v) { return v > 0 ? v : std::expm1(v); },
                            [](double xv, double yv) { return xv > 0 ? 1.0 : yv + 1.0; });
}

inline Tensor tanh_(const Tensor& x) {
    return detail::unary_op(x, [](double v) { return std::tanh(v); },
                            [](double, double yv) { return 1.0 - yv * yv; });
}

inline Tensor sigmoid(const Tensor& x) {
    return detail::unary_op(x, [](double v) { return detail::sigmoid_val(v); },
                            [](double, double yv) { return yv * (1.0 - yv); });
}

inline Tensor softplus(const Tensor& x) {
    return detail::unary_op(x, [](double v) { return v > 30.0 ? v : std::log1p(std::exp(v)); },
                            [](double xv, double) { return detail::sigmoid_val(xv); });
}

inline Tensor exp_(const Tensor& x) {
    return detail::unary_op(x, [](double v) { return std::exp(v); },
                            [](double, double yv) { return yv; });
}

// max(x, c) elementwise; zero gradient on the clamped side
inline Tensor clamp_min(const Tensor& x, double c) {
    return detail::unary_op(x, [c](double v) { return v > c ? v : c; },
                            [c](double xv, double) { return xv > c ? 1.0 : 0.0; });
}

// ---- reductions ----

inline Tensor sum_all(const Tensor& x) {
    double s = 0;
    const double* xp = x.ptr();
    for (int64_t i = 0; i < x.size(); ++i) s += xp[i];
    auto vals = std::make_shared<std::vector<double>>(1, s);
    return detail::finish_op({1}, vals, {&x}, [n = x.size()](const std::vector<int>& p) {
        return [n, px = p[0]](const double* g, Tape& t) {
            if (px < 0) return;
            double* gp = t.grad_buf(px);
            for (int64_t i = 0; i < n; ++i) gp[i] += g[0];
        };
    });
}

inline Tensor mean_all(const Tensor& x) { return affine(sum_all(x), 1.0 / static_cast<double>(x.size()), 0.0); }

// mean of squared elementwise differences
inline Tensor mse_loss(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "mse_loss");
    const int64_t n = a.size();
    double s = 0;
    const double* ap = a.ptr();
    const double* bp = b.ptr();
    for (int64_t i = 0; i < n; ++i) {
        double d = ap[i] - bp[i];
        s += d * d;
    }
    auto vals = std::make_shared<std::vector<double>>(1, s / static_cast<double>(n));
    return detail::finish_op({1}, vals, {&a, &b},
                             [n, ad = a.data, bd = b.data](const std::vector<int>& p) {
        return [n, ad, bd, pa = p[0], pb = p[1]](const double* g, Tape& t) {
            const double scale = 2.0 * g[0] / static_cast<double>(n);
            const double* av = ad->data();
            const double* bv = bd->data();
            if (pa >= 0) {
                double* gp = t.grad_buf(pa);
                for (int64_t i = 0; i < n; ++i) gp[i] += scale * (av[i] - bv[i]);
            }
            if (pb >= 0) {
                double* gp = t.grad_buf(pb);
                for (int64_t i = 0; i < n; ++i) gp[i] -= scale * (av[i] - bv[i]);
            }
        };
    });
}

// ---- shape ops ----

inline Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.size())
        throw std::invalid_argument("reshape: size mismatch " + shape_str(x.shape) + " -> " + shape_str(shape));
    auto vals = std::make_shared<std::vector<double>>(*x.data);
    return detail::finish_op(std::move(shape), vals, {&x}, [n = x.size()](const std::vector<int>& p) {
        return [n, px = p[0]](const double* g, Tape& t) {
            if (px < 0) return;
            double* gp = t.grad_buf(px);
            for (int64_t i = 0; i < n; ++i) gp[i] += g[i];
        };
    });
}

namespace detail {
inline void require_matrix(const Tensor& t, const char* op) {
    if (t.shape.size() != 2)
        throw std::invalid_argument(std::string(op) + ": expected 2-d tensor, got " + shape_str(t.shape));
}
}  // namespace detail

// columns [c0, c1) of a [B,n] tensor
inline Tensor slice_cols(const Tensor& x, int c0, int c1) {
    detail::require_matrix(x, "slice_cols");
    const int B = x.shape[0], n = x.shape[1];
    if (c0 < 0 || c1 > n || c0 >= c1) throw std::invalid_argument("slice_cols: bad column range");
    const int w = c1 - c0;
    auto vals = std::make_shared<std::vector<double>>(static_cast<size_t>(B) * w);
    const double* xp = x.ptr();
    for (int i = 0; i < B; ++i)
        for (int j = 0; j < w; ++j) (*vals)[static_cast<size_t>(i) * w + j] = xp[static_cast<size_t>(i) * n + c0 + j];
    return detail::finish_op({B, w}, vals, {&x}, [B, n, c0, w](const std::vector<int>& p) {
        return [B, n, c0, w, px = p[0]](const double* g, Tape& t) {
            if (px < 0) return;
            double* gp = t.grad_buf(px);
            for (int i = 0; i < B; ++i)
                for (int j = 0; j < w; ++j)
                    gp[static_cast<size_t>(i) * n + c0 + j] += g[static_cast<size_t>(i) * w + j];
        };
    });
}

// rows [r0, r1) of a [B,n] tensor (contiguous)
inline Tensor slice_rows(const Tensor& x, int r0, int r1) {
    detail::require_matrix(x, "slice_rows");
    const int B = x.shape[0], n = x.shape[1];
    if (r0 < 0 || r1 > B || r0 >= r1) throw std::invalid_argument("slice_rows: bad row range");
    const int h = r1 - r0;
    auto vals = std::make_shared<std::vector<double>>(x.data->begin() + static_cast<int64_t>(r0) * n,
                                                      x.data->begin() + static_cast<int64_t>(r1) * n);
    return detail::finish_op({h, n}, vals, {&x}, [r0, n, h](const std::vector<int>& p) {
        return [r0, n, h, px = p[0]](const double* g, Tape& t) {
            if (px < 0) return;
            double* gp = t.grad_buf(px) + static_cast<int64_t>(r0) * n;
            for (int64_t i = 0; i < static_cast<int64_t>(h) * n; ++i) gp[i] += g[i];
        };
    });
}

inline Tensor concat_cols(const std::vector<Tensor>& xs) {
    if (xs.empty()) throw std::invalid_argument("concat_cols: empty input");
    const int B = xs[0].shape[0];
    int total = 0;
    for (const Tensor& x : xs) {
        detail::require_matrix(x, "concat_cols");
        if (x.shape[0] != B) throw std::invalid_argument("concat_cols: row count mismatch");
        total += x.shape[1];
    }
    auto vals = std::make_shared<std::vector<double>>(static_cast<size_t>(B) * total);
    std::vector<int> widths;
    int off = 0;
    for (const Tensor& x : xs) {
        const int w = x.shape[1];
        const double* xp = x.ptr();
        for (int i = 0; i < B; ++i)
            std::memcpy(vals->data() + static_cast<size_t>(i) * total + off, xp + static_cast<size_t>(i) * w,
                        sizeof(double) * static_cast<size_t>(w));
        widths.push_back(w);
        off += w;
    }
    std::vector<const Tensor*> ins;
    for (const Tensor& x : xs) ins.push_back(&x);
    // finish_op takes an initializer_list; build the node manually for variadic inputs
    Tensor out;
    out.shape = {B, total};
    out.data = vals;
    for (const Tensor& x : xs) out.requires_grad = out.requires_grad || x.requires_grad;
    Tape* tp = Tape::active();
    if (!tp) return out;
    std::vector<int> pids, parents;
    bool any = false;
    for (const Tensor& x : xs) {
        if (detail::tracked(x)) {
            pids.push_back(x.node);
            parents.push_back(x.node);
            any = true;
        } else {
            pids.push_back(-1);
        }
    }
    if (!any) return out;
    out.node = tp->add_node(out.size(), parents, [B, total, widths, pids](const double* g, Tape& t) {
        int off2 = 0;
        for (size_t k = 0; k < widths.size(); ++k) {
            const int w = widths[k];
            if (pids[k] >= 0) {
                double* gp = t.grad_buf(pids[k]);
                for (int i = 0; i < B; ++i)
                    for (int j = 0; j < w; ++j)
                        gp[static_cast<size_t>(i) * w + j] += g[static_cast<size_t>(i) * total + off2 + j];
            }
            off2 += w;
        }
    });
    out.tape_gen = tp->gen();
    return out;
}

// ---- dense / matmul ----

// y[B,m] = x[B,n] * W[m,n]^T + b[m]; bias optional
inline Tensor dense(const Tensor& x, const Tensor& W, const Tensor* b = nullptr) {
    detail::require_matrix(x, "dense");
    detail::require_matrix(W, "dense");
    const int B = x.shape[0], n = x.shape[1], m = W.shape[0];
    if (W.shape[1] != n)
        throw std::invalid_argument("dense: weight " + shape_str(W.shape) + " does not conform to input " +
                                    shape_str(x.shape));
    if (b && (b->shape.size() != 1 || b->shape[0] != m))
        throw std::invalid_argument("dense: bias " + shape_str(b->shape) + " does not match output width " +
                                    std::to_string(m));
    auto vals = std::make_shared<std::vector<double>>(static_cast<size_t>(B) * m, 0.0);
    // transposing W first keeps the hot loop in the much faster nn kernel
    {
        std::vector<double> wt(static_cast<size_t>(n) * m);
        const double* wp = W.ptr();
        for (int r = 0; r < m; ++r)
            for (int c = 0; c < n; ++c) wt[static_cast<size_t>(c) * m + r] = wp[static_cast<size_t>(r) * n + c];
        gemm_nn(B, m, n, x.ptr(), wt.data(), vals->data());
    }
    if (b) {
        const double* bp = b->ptr();
        for (int i = 0; i < B; ++i)
            for (int j = 0; j < m; ++j) (*vals)[static_cast<size_t>(i) * m + j] += bp[j];
    }
    Tensor bias_dummy;
    const Tensor& bref = b ? *b : bias_dummy;
    auto make_pull = [B, n, m, xd = x.data, Wd = W.data](const std::vector<int>& p) {
        return [B, n, m, xd, Wd, px = p[0], pw = p[1], pb = p.size() > 2 ? p[2] : -1](const double* g, Tape& t) {
            if (px >= 0) gemm_nn(B, n, m, g, Wd->data(), t.grad_buf(px));              // dx = g * W
            if (pw >= 0) gemm_tn(m, n, B, g, xd->data(), t.grad_buf(pw));              // dW = g^T * x
            if (pb >= 0) {
                double* gb = t.grad_buf(pb);
                for (int i = 0; i < B; ++i)
                    for (int j = 0; j < m; ++j) gb[j] += g[static_cast<size_t>(i) * m + j];
            }
        };
    };
    if (b) return detail::finish_op({B, m}, vals, {&x, &W, &bref}, make_pull);
    return detail::finish_op({B, m}, vals, {&x, &W}, make_pull);
}

// ---- stochastic / divergence ----

// mu + sigma .* noise; the noise tensor is data, never a gradient path
inline Tensor reparam_sample(const Tensor& mu, const Tensor& sigma, const Tensor& noise) {
    detail::require_same_shape(mu, sigma, "reparam_sample");
    detail::require_same_shape(mu, noise, "reparam_sample");
    auto vals = std::make_shared<std::vector<double>>(mu.size());
    const double* mp = mu.ptr();
    const double* sp = sigma.ptr();
    const double* np = noise.ptr();
    for (int64_t i = 0; i < mu.size(); ++i) (*vals)[i] = mp[i] + sp[i] * np[i];
    return detail::finish_op(mu.shape, vals, {&mu, &sigma},
                             [n = mu.size(), nd = noise.data](const std::vector<int>& p) {
        return [n, nd, pm = p[0], ps = p[1]](const double* g, Tape& t) {
            if (pm >= 0) {
                double* gp = t.grad_buf(pm);
                for (int64_t i = 0; i < n; ++i) gp[i] += g[i];
            }
            if (ps >= 0) {
                double* gp = t.grad_buf(ps);
                const double* nv = nd->data();
                for (int64_t i = 0; i < n; ++i) gp[i] += g[i] * nv[i];
            }
        };
    });
}

// Per-row KL of diagonal Gaussians: inputs [B,d] (or [d] treated as one row),
// output [B]. KL(q || p) summed over d.
inline Tensor gaussian_kl_rows(const Tensor& mu_q, const Tensor& sigma_q, const Tensor& mu_p,
                               const Tensor& sigma_p) {
    detail::require_same_shape(mu_q, sigma_q, "gaussian_kl");
    detail::require_same_shape(mu_q, mu_p, "gaussian_kl");
    detail::require_same_shape(mu_q, sigma_p, "gaussian_kl");
    int B = 1, d = 0;
    if (mu_q.shape.size() == 2) {
        B = mu_q.shape[0];
        d = mu_q.shape[1];
    } else if (mu_q.shape.size() == 1) {
        d = mu_q.shape[0];
    } else {
        throw std::invalid_argument("gaussian_kl: expected 1-d or 2-d tensors, got " + shape_str(mu_q.shape));
    }
    const double* mq = mu_q.ptr();
    const double* sq = sigma_q.ptr();
    const double* mp = mu_p.ptr();
    const double* sp = sigma_p.ptr();
    for (int64_t i = 0; i < mu_q.size(); ++i)
        if (sq[i] <= 0 || sp[i] <= 0)
            throw std::domain_error("gaussian_kl: non-positive standard deviation");
    auto vals = std::make_shared<std::vector<double>>(B, 0.0);
    for (int i = 0; i < B; ++i) {
        double acc = 0;
        for (int j = 0; j < d; ++j) {
            const int64_t k = static_cast<int64_t>(i) * d + j;
            const double dm = mq[k] - mp[k];
            acc += std::log(sp[k] / sq[k]) + (sq[k] * sq[k] + dm * dm) / (2.0 * sp[k] * sp[k]) - 0.5;
        }
        (*vals)[i] = acc;
    }
    return detail::finish_op({B}, vals, {&mu_q, &sigma_q, &mu_p, &sigma_p},
                             [B, d, mqd = mu_q.data, sqd = sigma_q.data, mpd = mu_p.data,
                              spd = sigma_p.data](const std::vector<int>& p) {
        return [B, d, mqd, sqd, mpd, spd, p](const double* g, Tape& t) {
            const double* mq = mqd->data();
            const double* sq = sqd->data();
            const double* mp = mpd->data();
            const double* sp = spd->data();
            double* gmq = p[0] >= 0 ? t.grad_buf(p[0]) : nullptr;
            double* gsq = p[1] >= 0 ? t.grad_buf(p[1]) : nullptr;
            double* gmp = p[2] >= 0 ? t.grad_buf(p[2]) : nullptr;
            double* gsp = p[3] >= 0 ? t.grad_buf(p[3]) : nullptr;
            for (int i = 0; i < B; ++i) {
                const double gi = g[i];
                for (int j = 0; j < d; ++j) {
                    const int64_t k = static_cast<int64_t>(i) * d + j;
                    const double dm = mq[k] - mp[k];
                    const double sp2 = sp[k] * sp[k];
                    if (gmq) gmq[k] += gi * dm / sp2;
                    if (gmp) gmp[k] -= gi * dm / sp2;
                    if (gsq) gsq[k] += gi * (-1.0 / sq[k] + sq[k] / sp2);
                    if (gsp) gsp[k] += gi * (1.0 / sp[k] - (sq[k] * sq[k] + dm * dm) / (sp2 * sp[k]));
                }
            }
        };
    });
}

// Scalar KL over a single diagonal Gaussian pair.
inline Tensor gaussian_kl_diag(const Tensor& mu_q, const Tensor& sigma_q, const Tensor& mu_p,
                               const Tensor& sigma_p) {
    return sum_all(gaussian_kl_rows(mu_q, sigma_q, mu_p, sigma_p));
}

}  // namespace latentsafe
