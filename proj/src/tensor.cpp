#include "cg/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace cg {

int64_t numel(const Shape& s) {
    int64_t n = 1;
    for (int d : s) {
        CG_CHECK(d > 0, "tensor dims must be positive");
        n *= d;
    }
    return n;
}

namespace detail {

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

}  // namespace detail

NoGradGuard::NoGradGuard() : prev_(detail::g_grad_enabled) { detail::g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { detail::g_grad_enabled = prev_; }

// ---- Tensor basics ----

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double v) {
    Tensor t;
    t.node_ = std::make_shared<detail::Node>();
    t.node_->value.assign(numel(shape), v);
    t.node_->shape = std::move(shape);
    return t;
}

Tensor Tensor::from(Shape shape, std::vector<double> data) {
    CG_CHECK((int64_t)data.size() == numel(shape), "data size does not match shape");
    Tensor t;
    t.node_ = std::make_shared<detail::Node>();
    t.node_->shape = std::move(shape);
    t.node_->value = std::move(data);
    return t;
}

Tensor Tensor::scalar(double v) { return from({1}, {v}); }

Tensor Tensor::uniform(Shape shape, Rng& rng, double lo, double hi) {
    std::vector<double> d(numel(shape));
    for (auto& v : d) v = rng.uniform(lo, hi);
    return from(std::move(shape), std::move(d));
}

Tensor Tensor::normal(Shape shape, Rng& rng, double stddev) {
    std::vector<double> d(numel(shape));
    for (auto& v : d) v = rng.normal() * stddev;
    return from(std::move(shape), std::move(d));
}

const Shape& Tensor::shape() const {
    CG_CHECK(node_, "undefined tensor");
    return node_->shape;
}

int Tensor::dim(int i) const {
    const auto& s = shape();
    CG_CHECK(i >= 0 && i < (int)s.size(), "dim index out of range");
    return s[i];
}

int Tensor::ndim() const { return (int)shape().size(); }

int64_t Tensor::size() const { return (int64_t)node_->value.size(); }

std::span<const double> Tensor::data() const {
    CG_CHECK(node_, "undefined tensor");
    return node_->value;
}

std::span<double> Tensor::data_mut() {
    CG_CHECK(node_, "undefined tensor");
    return node_->value;
}

double Tensor::item() const {
    CG_CHECK(node_ && node_->value.size() == 1, "item() needs a single-element tensor");
    return node_->value[0];
}

double Tensor::at(std::initializer_list<int> idx) const {
    const auto& s = shape();
    CG_CHECK(idx.size() == s.size(), "index rank mismatch");
    int64_t flat = 0;
    int k = 0;
    for (int i : idx) {
        CG_CHECK(i >= 0 && i < s[k], "index out of range");
        flat = flat * s[k] + i;
        ++k;
    }
    return node_->value[flat];
}

Tensor Tensor::detached() const {
    CG_CHECK(node_, "undefined tensor");
    return from(node_->shape, node_->value);
}

Tensor& Tensor::set_requires_grad(bool b) {
    CG_CHECK(node_, "undefined tensor");
    node_->requires_grad = b;
    return *this;
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

std::span<const double> Tensor::grad() const {
    CG_CHECK(node_, "undefined tensor");
    node_->ensure_grad();
    return node_->grad;
}

void Tensor::zero_grad() {
    CG_CHECK(node_, "undefined tensor");
    node_->grad.assign(node_->value.size(), 0.0);
}

bool Tensor::all_finite() const {
    for (double v : data())
        if (!std::isfinite(v)) return false;
    return true;
}

void Tensor::backward() {
    CG_CHECK(node_ && node_->value.size() == 1, "backward() starts from a scalar");
    // iterative post-order DFS for topological order
    std::vector<detail::Node*> order;
    std::vector<std::pair<detail::Node*, size_t>> stack;
    std::vector<detail::Node*> seen;
    auto visited = [&](detail::Node* n) {
        return std::find(seen.begin(), seen.end(), n) != seen.end();
    };
    if (!visited(node_.get())) {
        stack.push_back({node_.get(), 0});
        seen.push_back(node_.get());
    }
    while (!stack.empty()) {
        auto& [n, i] = stack.back();
        if (i < n->parents.size()) {
            detail::Node* p = n->parents[i++].get();
            if (!visited(p)) {
                seen.push_back(p);
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }
    for (auto* n : order) n->ensure_grad();
    node_->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::Node* n = *it;
        if (n->backward) n->backward(*n);
    }
}

Tensor make_op(Shape shape, std::vector<Tensor> parents,
               std::function<void(detail::Node&)> backward) {
    Tensor t;
    t.node_ = std::make_shared<detail::Node>();
    t.node_->shape = std::move(shape);
    t.node_->value.resize(numel(t.node_->shape));
    bool track = detail::grad_enabled();
    bool any = false;
    for (auto& p : parents) any = any || p.requires_grad();
    if (track && any) {
        t.node_->requires_grad = true;
        for (auto& p : parents)
            if (p.defined()) t.node_->parents.push_back(p.node_);
        t.node_->backward = std::move(backward);
    }
    return t;
}

namespace {

detail::Node* parent(detail::Node& n, size_t i) { return n.parents[i].get(); }

// accumulate helper: ensures grad buffer then returns pointer (or nullptr)
double* grad_buf(detail::Node* p) {
    if (!p->requires_grad) return nullptr;
    p->ensure_grad();
    return p->grad.data();
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    CG_CHECK(a.shape() == b.shape(), std::string(op) + ": shape mismatch");
}

}  // namespace

// ---- elementwise ----

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    Tensor out = make_op(a.shape(), {a, b}, [](detail::Node& n) {
        for (int k = 0; k < 2; ++k)
            if (double* g = grad_buf(parent(n, k)))
                for (size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i];
    });
    auto av = a.data();
    auto bv = b.data();
    auto ov = out.data_mut();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    Tensor out = make_op(a.shape(), {a, b}, [](detail::Node& n) {
        if (double* g = grad_buf(parent(n, 0)))
            for (size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i];
        if (double* g = grad_buf(parent(n, 1)))
            for (size_t i = 0; i < n.grad.size(); ++i) g[i] -= n.grad[i];
    });
    auto av = a.data();
    auto bv = b.data();
    auto ov = out.data_mut();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] - bv[i];
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    Tensor out = make_op(a.shape(), {a, b}, [](detail::Node& n) {
        auto av = parent(n, 0)->value.data();
        auto bv = parent(n, 1)->value.data();
        if (double* g = grad_buf(parent(n, 0)))
            for (size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i] * bv[i];
        if (double* g = grad_buf(parent(n, 1)))
            for (size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i] * av[i];
    });
    auto av = a.data();
    auto bv = b.data();
    auto ov = out.data_mut();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];
    return out;
}

Tensor neg(const Tensor& x) { return scale(x, -1.0); }

Tensor scale(const Tensor& x, double c) {
    Tensor out = make_op(x.shape(), {x}, [c](detail::Node& n) {
        if (double* g = grad_buf(parent(n, 0)))
            for (size_t i = 0; i < n.grad.size(); ++i) g[i] += c * n.grad[i];
    });
    auto xv = x.data();
    auto ov = out.data_mut();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = c * xv[i];
    return out;
}

Tensor add_const(const Tensor& x, double c) {
    Tensor out = make_op(x.shape(), {x}, [](detail::Node& n) {
        if (double* g = grad_buf(parent(n, 0)))
            for (size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i];
    });
    auto xv = x.data();
    auto ov = out.data_mut();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = xv[i] + c;
    return out;
}

Tensor relu(const Tensor& x) {
    Tensor out = make_op(x.shape(), {x}, [](detail::Node& n) {
        auto xv = parent(n, 0)->value.data();
        if (double* g = grad_buf(parent(n, 0)))
            for (size_t i = 0; i < n.grad.size(); ++i)
                if (xv[i] > 0) g[i] += n.grad[i];
    });
    auto xv = x.data();
    auto ov = out.data_mut();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = xv[i] > 0 ? xv[i] : 0.0;
    return out;
}

Tensor sigmoid(const Tensor& x) {
    Tensor out = make_op(x.shape(), {x}, [](detail::Node& n) {
        if (double* g = grad_buf(parent(n, 0)))
            for (size_t i = 0; i < n.grad.size(); ++i) {
                double y = n.value[i];
                g[i] += n.grad[i] * y * (1.0 - y);
            }
    });
    auto xv = x.data();
    auto ov = out.data_mut();
    for (size_t i = 0; i < ov.size(); ++i)
        ov[i] = xv[i] >= 0 ? 1.0 / (1.0 + std::exp(-xv[i]))
                           : std::exp(xv[i]) / (1.0 + std::exp(xv[i]));
    return out;
}

Tensor exp_t(const Tensor& x) {
    Tensor out = make_op(x.shape(), {x}, [](detail::Node& n) {
        if (double* g = grad_buf(parent(n, 0)))
            for (size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i] * n.value[i];
    });
    auto xv = x.data();
    auto ov = out.data_mut();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = std::exp(xv[i]);
    return out;
}

Tensor log_t(const Tensor& x) {
    Tensor out = make_op(x.shape(), {x}, [](detail::Node& n) {
        auto xv = parent(n, 0)->value.data();
        if (double* g = grad_buf(parent(n, 0)))
            for (size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i] / xv[i];
    });
    auto xv = x.data();
    auto ov = out.data_mut();
    for (size_t i = 0; i < ov.size(); ++i) {
        CG_CHECK(xv[i] > 0, "log of non-positive value");
        ov[i] = std::log(xv[i]);
    }
    return out;
}

Tensor mul_scalar_t(const Tensor& x, const Tensor& s) {
    CG_CHECK(s.size() == 1, "mul_scalar_t: scalar operand must have one element");
    Tensor out = make_op(x.shape(), {x, s}, [](detail::Node& n) {
        double sv = parent(n, 1)->value[0];
        auto xv = parent(n, 0)->value.data();
        if (double* g = grad_buf(parent(n, 0)))
            for (size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i] * sv;
        if (double* g = grad_buf(parent(n, 1))) {
            double acc = 0.0;
            for (size_t i = 0; i < n.grad.size(); ++i) acc += n.grad[i] * xv[i];
            g[0] += acc;
        }
    });
    auto xv = x.data();
    auto ov = out.data_mut();
    double sv = s.item();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = xv[i] * sv;
    return out;
}

Tensor add_scalar_t(const Tensor& x, const Tensor& s) {
    CG_CHECK(s.size() == 1, "add_scalar_t: scalar operand must have one element");
    Tensor out = make_op(x.shape(), {x, s}, [](detail::Node& n) {
        if (double* g = grad_buf(parent(n, 0)))
            for (size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i];
        if (double* g = grad_buf(parent(n, 1))) {
            double acc = 0.0;
            for (size_t i = 0; i < n.grad.size(); ++i) acc += n.grad[i];
            g[0] += acc;
        }
    });
    auto xv = x.data();
    auto ov = out.data_mut();
    double sv = s.item();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = xv[i] + sv;
    return out;
}

// ---- reductions / linear algebra ----

Tensor sum_all(const Tensor& x) {
    Tensor out = make_op({1}, {x}, [](detail::Node& n) {
        if (double* g = grad_buf(parent(n, 0)))
            for (size_t i = 0; i < parent(n, 0)->value.size(); ++i) g[i] += n.grad[0];
    });
    double acc = 0.0;
    for (double v : x.data()) acc += v;
    out.data_mut()[0] = acc;
    return out;
}

Tensor mean_all(const Tensor& x) { return scale(sum_all(x), 1.0 / (double)x.size()); }

Tensor mean_rows(const Tensor& x) {
    CG_CHECK(x.ndim() == 2, "mean_rows expects a matrix");
    int n = x.dim(0), m = x.dim(1);
    Tensor out = make_op({m}, {x}, [n, m](detail::Node& nd) {
        if (double* g = grad_buf(parent(nd, 0))) {
            double inv = 1.0 / n;
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < m; ++j) g[i * m + j] += nd.grad[j] * inv;
        }
    });
    auto xv = x.data();
    auto ov = out.data_mut();
    for (int j = 0; j < m; ++j) {
        double acc = 0.0;
        for (int i = 0; i < n; ++i) acc += xv[i * m + j];
        ov[j] = acc / n;
    }
    return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    CG_CHECK(a.ndim() == 2 && b.ndim() == 2, "matmul expects matrices");
    int m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
    CG_CHECK(k == k2, "matmul: inner dimensions differ");
    Tensor out = make_op({m, n}, {a, b}, [m, k, n](detail::Node& nd) {
        auto av = parent(nd, 0)->value.data();
        auto bv = parent(nd, 1)->value.data();
        if (double* ga = grad_buf(parent(nd, 0)))
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j) {
                    double go = nd.grad[i * n + j];
                    if (go == 0.0) continue;
                    for (int t = 0; t < k; ++t) ga[i * k + t] += go * bv[t * n + j];
                }
        if (double* gb = grad_buf(parent(nd, 1)))
            for (int i = 0; i < m; ++i)
                for (int t = 0; t < k; ++t) {
                    double av_it = av[i * k + t];
                    if (av_it == 0.0) continue;
                    for (int j = 0; j < n; ++j) gb[t * n + j] += av_it * nd.grad[i * n + j];
                }
    });
    auto av = a.data();
    auto bv = b.data();
    auto ov = out.data_mut();
    for (int i = 0; i < m; ++i)
        for (int t = 0; t < k; ++t) {
            double av_it = av[i * k + t];
            if (av_it == 0.0) continue;
            for (int j = 0; j < n; ++j) ov[i * n + j] += av_it * bv[t * n + j];
        }
    return out;
}

Tensor transpose2d(const Tensor& x) {
    CG_CHECK(x.ndim() == 2, "transpose2d expects a matrix");
    int m = x.dim(0), n = x.dim(1);
    Tensor out = make_op({n, m}, {x}, [m, n](detail::Node& nd) {
        if (double* g = grad_buf(parent(nd, 0)))
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j) g[i * n + j] += nd.grad[j * m + i];
    });
    auto xv = x.data();
    auto ov = out.data_mut();
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) ov[j * m + i] = xv[i * n + j];
    return out;
}

Tensor add_row_vector(const Tensor& x, const Tensor& v) {
    CG_CHECK(x.ndim() == 2 && v.ndim() == 1 && x.dim(1) == v.dim(0),
             "add_row_vector: incompatible shapes");
    int n = x.dim(0), m = x.dim(1);
    Tensor out = make_op({n, m}, {x, v}, [n, m](detail::Node& nd) {
        if (double* g = grad_buf(parent(nd, 0)))
            for (size_t i = 0; i < nd.grad.size(); ++i) g[i] += nd.grad[i];
        if (double* g = grad_buf(parent(nd, 1)))
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < m; ++j) g[j] += nd.grad[i * m + j];
    });
    auto xv = x.data();
    auto vv = v.data();
    auto ov = out.data_mut();
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j) ov[i * m + j] = xv[i * m + j] + vv[j];
    return out;
}

Tensor softmax_rows(const Tensor& x) {
    CG_CHECK(x.ndim() == 2, "softmax_rows expects a matrix");
    int n = x.dim(0), m = x.dim(1);
    Tensor out = make_op({n, m}, {x}, [n, m](detail::Node& nd) {
        if (double* g = grad_buf(parent(nd, 0)))
            for (int i = 0; i < n; ++i) {
                const double* y = nd.value.data() + (size_t)i * m;
                const double* gy = nd.grad.data() + (size_t)i * m;
                double dot = 0.0;
                for (int j = 0; j < m; ++j) dot += gy[j] * y[j];
                for (int j = 0; j < m; ++j) g[i * m + j] += y[j] * (gy[j] - dot);
            }
    });
    auto xv = x.data();
    auto ov = out.data_mut();
    for (int i = 0; i < n; ++i) {
        const double* row = xv.data() + (size_t)i * m;
        double mx = row[0];
        for (int j = 1; j < m; ++j) mx = std::max(mx, row[j]);
        double z = 0.0;
        for (int j = 0; j < m; ++j) z += std::exp(row[j] - mx);
        for (int j = 0; j < m; ++j) ov[i * m + j] = std::exp(row[j] - mx) / z;
    }
    return out;
}

Tensor dot_const(const Tensor& x, std::span<const double> c) {
    CG_CHECK((size_t)x.size() == c.size(), "dot_const: length mismatch");
    std::vector<double> cc(c.begin(), c.end());
    Tensor out = make_op({1}, {x}, [cc](detail::Node& nd) {
        if (double* g = grad_buf(parent(nd, 0)))
            for (size_t i = 0; i < cc.size(); ++i) g[i] += nd.grad[0] * cc[i];
    });
    double acc = 0.0;
    auto xv = x.data();
    for (size_t i = 0; i < cc.size(); ++i) acc += xv[i] * cc[i];
    out.data_mut()[0] = acc;
    return out;
}

Tensor reshape(const Tensor& x, Shape shape) {
    CG_CHECK(numel(shape) == x.size(), "reshape: element count mismatch");
    Tensor out = make_op(std::move(shape), {x}, [](detail::Node& nd) {
        if (double* g = grad_buf(parent(nd, 0)))
            for (size_t i = 0; i < nd.grad.size(); ++i) g[i] += nd.grad[i];
    });
    auto xv = x.data();
    auto ov = out.data_mut();
    std::copy(xv.begin(), xv.end(), ov.begin());
    return out;
}

// ---- conv / spatial ----

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int pad) {
    CG_CHECK(x.ndim() == 4 && w.ndim() == 4, "conv2d expects 4d input and weight");
    int b = x.dim(0), ci = x.dim(1), h = x.dim(2), wd = x.dim(3);
    int co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    CG_CHECK(w.dim(1) == ci, "conv2d: channel mismatch");
    CG_CHECK(stride >= 1 && pad >= 0, "conv2d: bad stride or padding");
    int ho = (h + 2 * pad - kh) / stride + 1;
    int wo = (wd + 2 * pad - kw) / stride + 1;
    CG_CHECK(ho >= 1 && wo >= 1, "conv2d: output would be empty");
    bool has_bias = bias.defined();
    if (has_bias) CG_CHECK(bias.ndim() == 1 && bias.dim(0) == co, "conv2d: bias shape");

    // Kernel-position-outer loops keep the inner ox sweep contiguous so it
    // vectorizes; the valid oy/ox ranges are hoisted out of the hot loop.
    auto oy_range = [stride](int k, int pad_, int in, int out_n, int& lo, int& hi) {
        int a = pad_ - k;
        lo = a > 0 ? (a + stride - 1) / stride : 0;
        int b_ = in - 1 + pad_ - k;
        hi = b_ < 0 ? 0 : std::min(out_n, b_ / stride + 1);
    };

    std::vector<Tensor> parents = {x, w};
    if (has_bias) parents.push_back(bias);
    Tensor out = make_op({b, co, ho, wo}, std::move(parents),
                         [=](detail::Node& nd) {
        auto xv = parent(nd, 0)->value.data();
        auto wv = parent(nd, 1)->value.data();
        double* gx = grad_buf(parent(nd, 0));
        double* gw = grad_buf(parent(nd, 1));
        double* gb = has_bias ? grad_buf(parent(nd, 2)) : nullptr;
        const double* go = nd.grad.data();
        for (int ib = 0; ib < b; ++ib)
            for (int oc = 0; oc < co; ++oc) {
                const double* gop = go + (((size_t)ib * co + oc) * ho) * wo;
                if (gb) {
                    double acc = 0.0;
                    for (int k = 0; k < ho * wo; ++k) acc += gop[k];
                    gb[oc] += acc;
                }
                if (!gx && !gw) continue;
                for (int ic = 0; ic < ci; ++ic) {
                    const double* xp = xv + (((size_t)ib * ci + ic) * h) * wd;
                    const double* wp = wv + (((size_t)oc * ci + ic) * kh) * kw;
                    double* gxp = gx ? gx + (((size_t)ib * ci + ic) * h) * wd : nullptr;
                    double* gwp = gw ? gw + (((size_t)oc * ci + ic) * kh) * kw : nullptr;
                    for (int ky = 0; ky < kh; ++ky)
                        for (int kx = 0; kx < kw; ++kx) {
                            int oy_lo, oy_hi, ox_lo, ox_hi;
                            oy_range(ky, pad, h, ho, oy_lo, oy_hi);
                            oy_range(kx, pad, wd, wo, ox_lo, ox_hi);
                            double wk = wp[ky * kw + kx];
                            double gwacc = 0.0;
                            int kxo = kx - pad;
                            for (int oy = oy_lo; oy < oy_hi; ++oy) {
                                int iy = oy * stride - pad + ky;
                                const double* grow = gop + (size_t)oy * wo;
                                const double* xrow = xp + (size_t)iy * wd;
                                double* gxrow = gxp ? gxp + (size_t)iy * wd : nullptr;
                                if (gxrow && gwp)
                                    for (int ox = ox_lo; ox < ox_hi; ++ox) {
                                        double g = grow[ox];
                                        gxrow[ox * stride + kxo] += g * wk;
                                        gwacc += g * xrow[ox * stride + kxo];
                                    }
                                else if (gxrow)
                                    for (int ox = ox_lo; ox < ox_hi; ++ox)
                                        gxrow[ox * stride + kxo] += grow[ox] * wk;
                                else
                                    for (int ox = ox_lo; ox < ox_hi; ++ox)
                                        gwacc += grow[ox] * xrow[ox * stride + kxo];
                            }
                            if (gwp) gwp[ky * kw + kx] += gwacc;
                        }
                }
            }
    });
    auto xv = x.data();
    auto wv = w.data();
    auto ov = out.data_mut();
    const double* bv = has_bias ? bias.data().data() : nullptr;
    for (int ib = 0; ib < b; ++ib)
        for (int oc = 0; oc < co; ++oc) {
            double* op = ov.data() + (((size_t)ib * co + oc) * ho) * wo;
            double b0 = bv ? bv[oc] : 0.0;
            for (int k = 0; k < ho * wo; ++k) op[k] = b0;
            for (int ic = 0; ic < ci; ++ic) {
                const double* xp = xv.data() + (((size_t)ib * ci + ic) * h) * wd;
                const double* wp = wv.data() + (((size_t)oc * ci + ic) * kh) * kw;
                for (int ky = 0; ky < kh; ++ky)
                    for (int kx = 0; kx < kw; ++kx) {
                        int oy_lo, oy_hi, ox_lo, ox_hi;
                        oy_range(ky, pad, h, ho, oy_lo, oy_hi);
                        oy_range(kx, pad, wd, wo, ox_lo, ox_hi);
                        double wk = wp[ky * kw + kx];
                        int kxo = kx - pad;
                        for (int oy = oy_lo; oy < oy_hi; ++oy) {
                            int iy = oy * stride - pad + ky;
                            const double* xrow = xp + (size_t)iy * wd;
                            double* orow = op + (size_t)oy * wo;
                            for (int ox = ox_lo; ox < ox_hi; ++ox)
                                orow[ox] += wk * xrow[ox * stride + kxo];
                        }
                    }
            }
        }
    return out;
}

Tensor global_avg_pool(const Tensor& x) {
    CG_CHECK(x.ndim() == 4, "global_avg_pool expects 4d input");
    int b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    int hw = h * w;
    Tensor out = make_op({b, c}, {x}, [b, c, hw](detail::Node& nd) {
        if (double* g = grad_buf(parent(nd, 0))) {
            double inv = 1.0 / hw;
            for (int i = 0; i < b * c; ++i) {
                double gv = nd.grad[i] * inv;
                for (int k = 0; k < hw; ++k) g[(size_t)i * hw + k] += gv;
            }
        }
    });
    auto xv = x.data();
    auto ov = out.data_mut();
    for (int i = 0; i < b * c; ++i) {
        double acc = 0.0;
        for (int k = 0; k < hw; ++k) acc += xv[(size_t)i * hw + k];
        ov[i] = acc / hw;
    }
    return out;
}

Tensor channel_mean_max(const Tensor& x) {
    CG_CHECK(x.ndim() == 4, "channel_mean_max expects 4d input");
    int b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    int hw = h * w;
    auto argmax = std::make_shared<std::vector<int>>((size_t)b * hw);
    Tensor out = make_op({b, 2, h, w}, {x}, [b, c, hw, argmax](detail::Node& nd) {
        if (double* g = grad_buf(parent(nd, 0))) {
            double inv = 1.0 / c;
            for (int ib = 0; ib < b; ++ib)
                for (int k = 0; k < hw; ++k) {
                    double gmean = nd.grad[((size_t)ib * 2 + 0) * hw + k] * inv;
                    double gmax = nd.grad[((size_t)ib * 2 + 1) * hw + k];
                    for (int ic = 0; ic < c; ++ic)
                        g[((size_t)ib * c + ic) * hw + k] += gmean;
                    int best = (*argmax)[(size_t)ib * hw + k];
                    g[((size_t)ib * c + best) * hw + k] += gmax;
                }
        }
    });
    auto xv = x.data();
    auto ov = out.data_mut();
    for (int ib = 0; ib < b; ++ib)
        for (int k = 0; k < hw; ++k) {
            double acc = 0.0, mx = xv[((size_t)ib * c) * hw + k];
            int best = 0;
            for (int ic = 0; ic < c; ++ic) {
                double v = xv[((size_t)ib * c + ic) * hw + k];
                acc += v;
                if (v > mx) {
                    mx = v;
                    best = ic;
                }
            }
            (*argmax)[(size_t)ib * hw + k] = best;
            ov[((size_t)ib * 2 + 0) * hw + k] = acc / c;
            ov[((size_t)ib * 2 + 1) * hw + k] = mx;
        }
    return out;
}

Tensor mul_channel_gate(const Tensor& x, const Tensor& g) {
    CG_CHECK(x.ndim() == 4 && g.ndim() == 2 && g.dim(0) == x.dim(0) && g.dim(1) == x.dim(1),
             "mul_channel_gate: incompatible shapes");
    int b = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    Tensor out = make_op(x.shape(), {x, g}, [b, c, hw](detail::Node& nd) {
        auto xv = parent(nd, 0)->value.data();
        auto gv = parent(nd, 1)->value.data();
        double* gx = grad_buf(parent(nd, 0));
        double* gg = grad_buf(parent(nd, 1));
        for (int i = 0; i < b * c; ++i) {
            double gate = gv[i];
            double acc = 0.0;
            for (int k = 0; k < hw; ++k) {
                double go = nd.grad[(size_t)i * hw + k];
                if (gx) gx[(size_t)i * hw + k] += go * gate;
                acc += go * xv[(size_t)i * hw + k];
            }
            if (gg) gg[i] += acc;
        }
    });
    auto xv = x.data();
    auto gv = g.data();
    auto ov = out.data_mut();
    for (int i = 0; i < b * c; ++i)
        for (int k = 0; k < hw; ++k) ov[(size_t)i * hw + k] = xv[(size_t)i * hw + k] * gv[i];
    return out;
}

Tensor mul_spatial_gate(const Tensor& x, const Tensor& g) {
    CG_CHECK(x.ndim() == 4 && g.ndim() == 4 && g.dim(0) == x.dim(0) && g.dim(1) == 1 &&
                 g.dim(2) == x.dim(2) && g.dim(3) == x.dim(3),
             "mul_spatial_gate: gate must be [B,1,H,W]");
    int b = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    Tensor out = make_op(x.shape(), {x, g}, [b, c, hw](detail::Node& nd) {
        auto xv = parent(nd, 0)->value.data();
        auto gv = parent(nd, 1)->value.data();
        double* gx = grad_buf(parent(nd, 0));
        double* gg = grad_buf(parent(nd, 1));
        for (int ib = 0; ib < b; ++ib)
            for (int ic = 0; ic < c; ++ic)
                for (int k = 0; k < hw; ++k) {
                    double go = nd.grad[((size_t)ib * c + ic) * hw + k];
                    if (go == 0.0) continue;
                    if (gx) gx[((size_t)ib * c + ic) * hw + k] += go * gv[(size_t)ib * hw + k];
                    if (gg) gg[(size_t)ib * hw + k] += go * xv[((size_t)ib * c + ic) * hw + k];
                }
    });
    auto xv = x.data();
    auto gv = g.data();
    auto ov = out.data_mut();
    for (int ib = 0; ib < b; ++ib)
        for (int ic = 0; ic < c; ++ic)
            for (int k = 0; k < hw; ++k)
                ov[((size_t)ib * c + ic) * hw + k] =
                    xv[((size_t)ib * c + ic) * hw + k] * gv[(size_t)ib * hw + k];
    return out;
}

Tensor mul_head_gate(const Tensor& x, const Tensor& g) {
    CG_CHECK(x.ndim() == 4 && g.ndim() == 4 && g.dim(0) == x.dim(0) && g.dim(2) == x.dim(2) &&
                 g.dim(3) == x.dim(3),
             "mul_head_gate: incompatible shapes");
    int b = x.dim(0), c = x.dim(1), nh = g.dim(1), hw = x.dim(2) * x.dim(3);
    CG_CHECK(nh >= 1 && c % nh == 0, "mul_head_gate: head count must divide channels");
    int cs = c / nh;  // channels per head
    Tensor out = make_op(x.shape(), {x, g}, [b, c, nh, cs, hw](detail::Node& nd) {
        auto xv = parent(nd, 0)->value.data();
        auto gv = parent(nd, 1)->value.data();
        double* gx = grad_buf(parent(nd, 0));
        double* gg = grad_buf(parent(nd, 1));
        for (int ib = 0; ib < b; ++ib)
            for (int ic = 0; ic < c; ++ic) {
                int m = ic / cs;
                for (int k = 0; k < hw; ++k) {
                    double go = nd.grad[((size_t)ib * c + ic) * hw + k];
                    if (go == 0.0) continue;
                    if (gx)
                        gx[((size_t)ib * c + ic) * hw + k] += go * gv[((size_t)ib * nh + m) * hw + k];
                    if (gg)
                        gg[((size_t)ib * nh + m) * hw + k] += go * xv[((size_t)ib * c + ic) * hw + k];
                }
            }
    });
    auto xv = x.data();
    auto gv = g.data();
    auto ov = out.data_mut();
    for (int ib = 0; ib < b; ++ib)
        for (int ic = 0; ic < c; ++ic) {
            int m = ic / cs;
            for (int k = 0; k < hw; ++k)
                ov[((size_t)ib * c + ic) * hw + k] =
                    xv[((size_t)ib * c + ic) * hw + k] * gv[((size_t)ib * nh + m) * hw + k];
        }
    return out;
}

Tensor permute_channels(const Tensor& x, const std::vector<int>& perm) {
    CG_CHECK(x.ndim() == 4, "permute_channels expects 4d input");
    int b = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    CG_CHECK((int)perm.size() == c, "permute_channels: permutation length mismatch");
    {
        std::vector<char> seen(c, 0);
        for (int p : perm) {
            CG_CHECK(p >= 0 && p < c && !seen[p], "permute_channels: not a permutation");
            seen[p] = 1;
        }
    }
    Tensor out = make_op(x.shape(), {x}, [b, c, hw, perm](detail::Node& nd) {
        if (double* g = grad_buf(parent(nd, 0)))
            for (int ib = 0; ib < b; ++ib)
                for (int ic = 0; ic < c; ++ic)
                    for (int k = 0; k < hw; ++k)
                        g[((size_t)ib * c + perm[ic]) * hw + k] +=
                            nd.grad[((size_t)ib * c + ic) * hw + k];
    });
    auto xv = x.data();
    auto ov = out.data_mut();
    for (int ib = 0; ib < b; ++ib)
        for (int ic = 0; ic < c; ++ic)
            std::memcpy(&ov[((size_t)ib * c + ic) * hw], &xv[((size_t)ib * c + perm[ic]) * hw],
                        sizeof(double) * hw);
    return out;
}

Tensor l2_normalize_locations(const Tensor& x) {
    CG_CHECK(x.ndim() == 4, "l2_normalize_locations expects 4d input");
    int b = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    auto norms = std::make_shared<std::vector<double>>((size_t)b * hw);
    Tensor out = make_op(x.shape(), {x}, [b, c, hw, norms](detail::Node& nd) {
        if (double* g = grad_buf(parent(nd, 0)))
            for (int ib = 0; ib < b; ++ib)
                for (int k = 0; k < hw; ++k) {
                    double nv = (*norms)[(size_t)ib * hw + k];
                    if (nv == 0.0) continue;
                    double dot = 0.0;
                    for (int ic = 0; ic < c; ++ic) {
                        size_t idx = ((size_t)ib * c + ic) * hw + k;
                        dot += nd.grad[idx] * nd.value[idx];
                    }
                    for (int ic = 0; ic < c; ++ic) {
                        size_t idx = ((size_t)ib * c + ic) * hw + k;
                        g[idx] += (nd.grad[idx] - dot * nd.value[idx]) / nv;
                    }
                }
    });
    auto xv = x.data();
    auto ov = out.data_mut();
    for (int ib = 0; ib < b; ++ib)
        for (int k = 0; k < hw; ++k) {
            double sq = 0.0;
            for (int ic = 0; ic < c; ++ic) {
                double v = xv[((size_t)ib * c + ic) * hw + k];
                sq += v * v;
            }
            double nv = std::sqrt(sq);
            (*norms)[(size_t)ib * hw + k] = nv;
            double inv = nv == 0.0 ? 0.0 : 1.0 / nv;
            for (int ic = 0; ic < c; ++ic) {
                size_t idx = ((size_t)ib * c + ic) * hw + k;
                ov[idx] = xv[idx] * inv;
            }
        }
    return out;
}

Tensor l2_normalize_rows(const Tensor& x) {
    CG_CHECK(x.ndim() == 2, "l2_normalize_rows expects a matrix");
    int n = x.dim(0), m = x.dim(1);
    auto norms = std::make_shared<std::vector<double>>(n);
    Tensor out = make_op(x.shape(), {x}, [n, m, norms](detail::Node& nd) {
        if (double* g = grad_buf(parent(nd, 0)))
            for (int i = 0; i < n; ++i) {
                double nv = (*norms)[i];
                if (nv == 0.0) continue;
                const double* y = nd.value.data() + (size_t)i * m;
                const double* gy = nd.grad.data() + (size_t)i * m;
                double dot = 0.0;
                for (int j = 0; j < m; ++j) dot += gy[j] * y[j];
                for (int j = 0; j < m; ++j) g[i * m + j] += (gy[j] - dot * y[j]) / nv;
            }
    });
    auto xv = x.data();
    auto ov = out.data_mut();
    for (int i = 0; i < n; ++i) {
        double sq = 0.0;
        for (int j = 0; j < m; ++j) sq += xv[i * m + j] * xv[i * m + j];
        double nv = std::sqrt(sq);
        (*norms)[i] = nv;
        double inv = nv == 0.0 ? 0.0 : 1.0 / nv;
        for (int j = 0; j < m; ++j) ov[i * m + j] = xv[i * m + j] * inv;
    }
    return out;
}

Tensor zero_pad_hw(const Tensor& x, int hp, int wp) {
    CG_CHECK(x.ndim() == 4, "zero_pad_hw expects 4d input");
    int b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    CG_CHECK(hp >= h && wp >= w, "zero_pad_hw: target must not shrink");
    Tensor out = make_op({b, c, hp, wp}, {x}, [b, c, h, w, hp, wp](detail::Node& nd) {
        if (double* g = grad_buf(parent(nd, 0)))
            for (int i = 0; i < b * c; ++i)
                for (int y = 0; y < h; ++y)
                    for (int z = 0; z < w; ++z)
                        g[((size_t)i * h + y) * w + z] += nd.grad[((size_t)i * hp + y) * wp + z];
    });
    auto xv = x.data();
    auto ov = out.data_mut();
    for (int i = 0; i < b * c; ++i)
        for (int y = 0; y < h; ++y)
            for (int z = 0; z < w; ++z)
                ov[((size_t)i * hp + y) * wp + z] = xv[((size_t)i * h + y) * w + z];
    return out;
}

Tensor replicate_pad_hw(const Tensor& x, int pad) {
    CG_CHECK(x.ndim() == 4, "replicate_pad_hw expects 4d input");
    CG_CHECK(pad >= 0, "replicate_pad_hw: negative pad");
    int b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    int hp = h + 2 * pad, wp = w + 2 * pad;
    auto clampi = [](int v, int hi) { return v < 0 ? 0 : (v > hi ? hi : v); };
    Tensor out = make_op({b, c, hp, wp}, {x}, [b, c, h, w, hp, wp, pad, clampi](detail::Node& nd) {
        if (double* g = grad_buf(parent(nd, 0)))
            for (int i = 0; i < b * c; ++i)
                for (int y = 0; y < hp; ++y)
                    for (int z = 0; z < wp; ++z) {
                        int sy = clampi(y - pad, h - 1), sz = clampi(z - pad, w - 1);
                        g[((size_t)i * h + sy) * w + sz] += nd.grad[((size_t)i * hp + y) * wp + z];
                    }
    });
    auto xv = x.data();
    auto ov = out.data_mut();
    for (int i = 0; i < b * c; ++i)
        for (int y = 0; y < hp; ++y)
            for (int z = 0; z < wp; ++z) {
                int sy = clampi(y - pad, h - 1), sz = clampi(z - pad, w - 1);
                ov[((size_t)i * hp + y) * wp + z] = xv[((size_t)i * h + sy) * w + sz];
            }
    return out;
}

Tensor crop_hw(const Tensor& x, int h, int w) {
    CG_CHECK(x.ndim() == 4, "crop_hw expects 4d input");
    int b = x.dim(0), c = x.dim(1), hp = x.dim(2), wp = x.dim(3);
    CG_CHECK(h <= hp && w <= wp && h >= 1 && w >= 1, "crop_hw: bad target size");
    Tensor out = make_op({b, c, h, w}, {x}, [b, c, h, w, hp, wp](detail::Node& nd) {
        if (double* g = grad_buf(parent(nd, 0)))
            for (int i = 0; i < b * c; ++i)
                for (int y = 0; y < h; ++y)
                    for (int z = 0; z < w; ++z)
                        g[((size_t)i * hp + y) * wp + z] += nd.grad[((size_t)i * h + y) * w + z];
    });
    auto xv = x.data();
    auto ov = out.data_mut();
    for (int i = 0; i < b * c; ++i)
        for (int y = 0; y < h; ++y)
            for (int z = 0; z < w; ++z)
                ov[((size_t)i * h + y) * w + z] = xv[((size_t)i * hp + y) * wp + z];
    return out;
}

Tensor lora_delta(const Tensor& x, const Tensor& a, const Tensor& b) {
    CG_CHECK(x.ndim() == 4 && a.ndim() == 2 && b.ndim() == 2, "lora_delta: bad ranks");
    int nb = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    int r = a.dim(1);
    CG_CHECK(a.dim(0) == c && b.dim(0) == r && b.dim(1) == c,
             "lora_delta: adapter shapes must be [C,r] and [r,C]");
    Tensor out = make_op(x.shape(), {x, a, b}, [nb, c, hw, r](detail::Node& nd) {
        auto xv = parent(nd, 0)->value.data();
        auto av = parent(nd, 1)->value.data();
        auto bv = parent(nd, 2)->value.data();
        double* gx = grad_buf(parent(nd, 0));
        double* ga = grad_buf(parent(nd, 1));
        double* gb = grad_buf(parent(nd, 2));
        std::vector<double> t(r), gt(r);
        for (int ib = 0; ib < nb; ++ib)
            for (int k = 0; k < hw; ++k) {
                // recompute t = x^T A for this location
                for (int j = 0; j < r; ++j) {
                    double acc = 0.0;
                    for (int ic = 0; ic < c; ++ic)
                        acc += xv[((size_t)ib * c + ic) * hw + k] * av[ic * r + j];
                    t[j] = acc;
                }
                // gt = B * gout
                for (int j = 0; j < r; ++j) {
                    double acc = 0.0;
                    for (int ic = 0; ic < c; ++ic)
                        acc += bv[j * c + ic] * nd.grad[((size_t)ib * c + ic) * hw + k];
                    gt[j] = acc;
                }
                if (gx)
                    for (int ic = 0; ic < c; ++ic) {
                        double acc = 0.0;
                        for (int j = 0; j < r; ++j) acc += av[ic * r + j] * gt[j];
                        gx[((size_t)ib * c + ic) * hw + k] += acc;
                    }
                if (ga)
                    for (int ic = 0; ic < c; ++ic) {
                        double xvv = xv[((size_t)ib * c + ic) * hw + k];
                        if (xvv == 0.0) continue;
                        for (int j = 0; j < r; ++j) ga[ic * r + j] += xvv * gt[j];
                    }
                if (gb)
                    for (int j = 0; j < r; ++j) {
                        if (t[j] == 0.0) continue;
                        for (int ic = 0; ic < c; ++ic)
                            gb[j * c + ic] += t[j] * nd.grad[((size_t)ib * c + ic) * hw + k];
                    }
            }
    });
    auto xv = x.data();
    auto av = a.data();
    auto bv = b.data();
    auto ov = out.data_mut();
    std::vector<double> t(r);
    for (int ib = 0; ib < nb; ++ib)
        for (int k = 0; k < hw; ++k) {
            for (int j = 0; j < r; ++j) {
                double acc = 0.0;
                for (int ic = 0; ic < c; ++ic)
                    acc += xv[((size_t)ib * c + ic) * hw + k] * av[ic * r + j];
                t[j] = acc;
            }
            for (int ic = 0; ic < c; ++ic) {
                double acc = 0.0;
                for (int j = 0; j < r; ++j) acc += t[j] * bv[j * c + ic];
                ov[((size_t)ib * c + ic) * hw + k] = acc;
            }
        }
    return out;
}

Tensor patch_mean(const Tensor& x, int ph, int pw) {
    CG_CHECK(x.ndim() == 4, "patch_mean expects [B,C,H,W]");
    CG_CHECK(ph >= 1 && pw >= 1, "patch_mean: patch size must be positive");
    int b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    CG_CHECK(h % ph == 0 && w % pw == 0, "patch_mean: patch size must divide the map");
    int nh = h / ph, nw = w / pw;
    int rows = b * nh * nw;
    double inv = 1.0 / (ph * pw);
    Tensor out = make_op({rows, c}, {x}, [b, c, h, w, ph, pw, nh, nw, inv](detail::Node& nd) {
        double* gx = grad_buf(parent(nd, 0));
        if (!gx) return;
        for (int ib = 0; ib < b; ++ib)
            for (int pi = 0; pi < nh; ++pi)
                for (int pj = 0; pj < nw; ++pj) {
                    int row = (ib * nh + pi) * nw + pj;
                    for (int ic = 0; ic < c; ++ic) {
                        double g = nd.grad[(size_t)row * c + ic] * inv;
                        for (int y = pi * ph; y < (pi + 1) * ph; ++y)
                            for (int xk = pj * pw; xk < (pj + 1) * pw; ++xk)
                                gx[(((size_t)ib * c + ic) * h + y) * w + xk] += g;
                    }
                }
    });
    auto xv = x.data();
    auto ov = out.data_mut();
    for (int ib = 0; ib < b; ++ib)
        for (int pi = 0; pi < nh; ++pi)
            for (int pj = 0; pj < nw; ++pj) {
                int row = (ib * nh + pi) * nw + pj;
                for (int ic = 0; ic < c; ++ic) {
                    double acc = 0.0;
                    for (int y = pi * ph; y < (pi + 1) * ph; ++y)
                        for (int xk = pj * pw; xk < (pj + 1) * pw; ++xk)
                            acc += xv[(((size_t)ib * c + ic) * h + y) * w + xk];
                    ov[(size_t)row * c + ic] = acc * inv;
                }
            }
    return out;
}

Tensor take_per_row(const Tensor& x, const std::vector<int>& idx, int k) {
    CG_CHECK(x.ndim() == 2, "take_per_row expects a matrix");
    int n = x.dim(0), m = x.dim(1);
    CG_CHECK(k >= 1 && (int)idx.size() == n * k, "take_per_row: index count mismatch");
    for (int j : idx) CG_CHECK(j >= 0 && j < m, "take_per_row: column index out of range");
    Tensor out = make_op({n, k}, {x}, [n, m, k, idx](detail::Node& nd) {
        double* gx = grad_buf(parent(nd, 0));
        if (!gx) return;
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < k; ++j)
                gx[(size_t)i * m + idx[i * k + j]] += nd.grad[(size_t)i * k + j];
    });
    auto xv = x.data();
    auto ov = out.data_mut();
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < k; ++j) ov[(size_t)i * k + j] = xv[(size_t)i * m + idx[i * k + j]];
    return out;
}

Tensor scatter_per_row(const Tensor& w, const std::vector<int>& idx, int m) {
    CG_CHECK(w.ndim() == 2, "scatter_per_row expects a matrix");
    int n = w.dim(0), k = w.dim(1);
    CG_CHECK(m >= k && (int)idx.size() == n * k, "scatter_per_row: index count mismatch");
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < k; ++j) {
            CG_CHECK(idx[i * k + j] >= 0 && idx[i * k + j] < m,
                     "scatter_per_row: column index out of range");
            for (int j2 = 0; j2 < j; ++j2)
                CG_CHECK(idx[i * k + j] != idx[i * k + j2],
                         "scatter_per_row: duplicate column in a row");
        }
    Tensor out = make_op({n, m}, {w}, [n, m, k, idx](detail::Node& nd) {
        double* gw = grad_buf(parent(nd, 0));
        if (!gw) return;
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < k; ++j)
                gw[(size_t)i * k + j] += nd.grad[(size_t)i * m + idx[i * k + j]];
    });
    auto wv = w.data();
    auto ov = out.data_mut();
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < k; ++j) ov[(size_t)i * m + idx[i * k + j]] = wv[(size_t)i * k + j];
    return out;
}

Tensor mul_patch_gate(const Tensor& x, const Tensor& g, int col, int ph, int pw) {
    CG_CHECK(x.ndim() == 4 && g.ndim() == 2, "mul_patch_gate: bad ranks");
    int b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    CG_CHECK(ph >= 1 && pw >= 1 && h % ph == 0 && w % pw == 0,
             "mul_patch_gate: patch size must divide the map");
    int nh = h / ph, nw = w / pw, m = g.dim(1);
    CG_CHECK(g.dim(0) == b * nh * nw, "mul_patch_gate: gate row count mismatch");
    CG_CHECK(col >= 0 && col < m, "mul_patch_gate: gate column out of range");
    Tensor out = make_op(x.shape(), {x, g}, [b, c, h, w, ph, pw, nh, nw, m, col](detail::Node& nd) {
        auto xv = parent(nd, 0)->value.data();
        auto gv = parent(nd, 1)->value.data();
        double* gx = grad_buf(parent(nd, 0));
        double* gg = grad_buf(parent(nd, 1));
        for (int ib = 0; ib < b; ++ib)
            for (int pi = 0; pi < nh; ++pi)
                for (int pj = 0; pj < nw; ++pj) {
                    int row = (ib * nh + pi) * nw + pj;
                    double gate = gv[(size_t)row * m + col];
                    double acc = 0.0;
                    for (int ic = 0; ic < c; ++ic)
                        for (int y = pi * ph; y < (pi + 1) * ph; ++y)
                            for (int xk = pj * pw; xk < (pj + 1) * pw; ++xk) {
                                size_t at = (((size_t)ib * c + ic) * h + y) * w + xk;
                                if (gx) gx[at] += nd.grad[at] * gate;
                                acc += nd.grad[at] * xv[at];
                            }
                    if (gg) gg[(size_t)row * m + col] += acc;
                }
    });
    auto xv = x.data();
    auto gv = g.data();
    auto ov = out.data_mut();
    for (int ib = 0; ib < b; ++ib)
        for (int pi = 0; pi < nh; ++pi)
            for (int pj = 0; pj < nw; ++pj) {
                double gate = gv[(size_t)((ib * nh + pi) * nw + pj) * m + col];
                for (int ic = 0; ic < c; ++ic)
                    for (int y = pi * ph; y < (pi + 1) * ph; ++y)
                        for (int xk = pj * pw; xk < (pj + 1) * pw; ++xk) {
                            size_t at = (((size_t)ib * c + ic) * h + y) * w + xk;
                            ov[at] = xv[at] * gate;
                        }
            }
    return out;
}

Tensor batch_standardize(const Tensor& x, double eps, std::vector<double>* mean_out,
                         std::vector<double>* var_out) {
    CG_CHECK(x.ndim() == 4, "batch_standardize expects 4d input");
    int b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    int hw = h * w;
    int64_t cnt = (int64_t)b * hw;
    std::vector<double> mean(c, 0.0), var(c, 0.0);
    auto xv = x.data();
    for (int ic = 0; ic < c; ++ic) {
        double acc = 0.0;
        for (int ib = 0; ib < b; ++ib)
            for (int k = 0; k < hw; ++k) acc += xv[((size_t)ib * c + ic) * hw + k];
        mean[ic] = acc / cnt;
    }
    for (int ic = 0; ic < c; ++ic) {
        double acc = 0.0;
        for (int ib = 0; ib < b; ++ib)
            for (int k = 0; k < hw; ++k) {
                double d = xv[((size_t)ib * c + ic) * hw + k] - mean[ic];
                acc += d * d;
            }
        var[ic] = acc / cnt;
    }
    std::vector<double> inv(c);
    for (int ic = 0; ic < c; ++ic) inv[ic] = 1.0 / std::sqrt(var[ic] + eps);
    if (mean_out) *mean_out = mean;
    if (var_out) *var_out = var;

    Tensor out = make_op(x.shape(), {x}, [b, c, hw, cnt, inv](detail::Node& nd) {
        if (double* g = grad_buf(parent(nd, 0)))
            for (int ic = 0; ic < c; ++ic) {
                double m1 = 0.0, m2 = 0.0;
                for (int ib = 0; ib < b; ++ib)
                    for (int k = 0; k < hw; ++k) {
                        size_t idx = ((size_t)ib * c + ic) * hw + k;
                        m1 += nd.grad[idx];
                        m2 += nd.grad[idx] * nd.value[idx];
                    }
                m1 /= cnt;
                m2 /= cnt;
                for (int ib = 0; ib < b; ++ib)
                    for (int k = 0; k < hw; ++k) {
                        size_t idx = ((size_t)ib * c + ic) * hw + k;
                        g[idx] += inv[ic] * (nd.grad[idx] - m1 - nd.value[idx] * m2);
                    }
            }
    });
    auto ov = out.data_mut();
    for (int ib = 0; ib < b; ++ib)
        for (int ic = 0; ic < c; ++ic)
            for (int k = 0; k < hw; ++k) {
                size_t idx = ((size_t)ib * c + ic) * hw + k;
                ov[idx] = (xv[idx] - mean[ic]) * inv[ic];
            }
    return out;
}

Tensor standardize_const(const Tensor& x, std::span<const double> mean,
                         std::span<const double> var, double eps) {
    CG_CHECK(x.ndim() == 4, "standardize_const expects 4d input");
    int b = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    CG_CHECK((int)mean.size() == c && (int)var.size() == c, "standardize_const: stats length");
    std::vector<double> inv(c), mu(mean.begin(), mean.end());
    for (int ic = 0; ic < c; ++ic) inv[ic] = 1.0 / std::sqrt(var[ic] + eps);
    Tensor out = make_op(x.shape(), {x}, [b, c, hw, inv](detail::Node& nd) {
        if (double* g = grad_buf(parent(nd, 0)))
            for (int ib = 0; ib < b; ++ib)
                for (int ic = 0; ic < c; ++ic)
                    for (int k = 0; k < hw; ++k) {
                        size_t idx = ((size_t)ib * c + ic) * hw + k;
                        g[idx] += nd.grad[idx] * inv[ic];
                    }
    });
    auto xv = x.data();
    auto ov = out.data_mut();
    for (int ib = 0; ib < b; ++ib)
        for (int ic = 0; ic < c; ++ic)
            for (int k = 0; k < hw; ++k) {
                size_t idx = ((size_t)ib * c + ic) * hw + k;
                ov[idx] = (xv[idx] - mu[ic]) * inv[ic];
            }
    return out;
}

// ---- grounding-specific ----

Tensor region_text_scores(const Tensor& e, std::span<const double> texts, int k_texts) {
    CG_CHECK(e.ndim() == 4, "region_text_scores expects 4d embeddings");
    int b = e.dim(0), d = e.dim(1), hw = e.dim(2) * e.dim(3);
    CG_CHECK(k_texts >= 1 && (int64_t)texts.size() == (int64_t)k_texts * d,
             "region_text_scores: text buffer size mismatch");
    std::vector<double> tv(texts.begin(), texts.end());
    Tensor out = make_op({b, k_texts, e.dim(2), e.dim(3)}, {e},
                         [b, d, hw, k_texts, tv](detail::Node& nd) {
        if (double* g = grad_buf(parent(nd, 0)))
            for (int ib = 0; ib < b; ++ib)
                for (int kt = 0; kt < k_texts; ++kt)
                    for (int k = 0; k < hw; ++k) {
                        double go = nd.grad[((size_t)ib * k_texts + kt) * hw + k];
                        if (go == 0.0) continue;
                        for (int id = 0; id < d; ++id)
                            g[((size_t)ib * d + id) * hw + k] += go * tv[(size_t)kt * d + id];
                    }
    });
    auto ev = e.data();
    auto ov = out.data_mut();
    for (int ib = 0; ib < b; ++ib)
        for (int kt = 0; kt < k_texts; ++kt)
            for (int k = 0; k < hw; ++k) {
                double acc = 0.0;
                for (int id = 0; id < d; ++id)
                    acc += ev[((size_t)ib * d + id) * hw + k] * tv[(size_t)kt * d + id];
                ov[((size_t)ib * k_texts + kt) * hw + k] = acc;
            }
    return out;
}

Tensor text_similarity_max(const Tensor& phi, const Tensor& psi, int heads) {
    CG_CHECK(phi.ndim() == 4 && psi.ndim() == 2, "text_similarity_max: bad ranks");
    int b = phi.dim(0), ec = phi.dim(1), hw = phi.dim(2) * phi.dim(3);
    int n = psi.dim(0);
    CG_CHECK(psi.dim(1) == ec, "text_similarity_max: projection width mismatch");
    CG_CHECK(heads >= 1 && ec % heads == 0, "text_similarity_max: heads must divide channels");
    CG_CHECK(n >= 1, "text_similarity_max: need at least one text");
    int dh = ec / heads;
    auto arg = std::make_shared<std::vector<int>>((size_t)b * heads * hw);
    Tensor out = make_op({b, heads, phi.dim(2), phi.dim(3)}, {phi, psi},
                         [b, ec, hw, n, heads, dh, arg](detail::Node& nd) {
        auto pv = parent(nd, 0)->value.data();
        auto sv = parent(nd, 1)->value.data();
        double* gp = grad_buf(parent(nd, 0));
        double* gs = grad_buf(parent(nd, 1));
        for (int ib = 0; ib < b; ++ib)
            for (int m = 0; m < heads; ++m)
                for (int k = 0; k < hw; ++k) {
                    size_t oidx = ((size_t)ib * heads + m) * hw + k;
                    double go = nd.grad[oidx];
                    if (go == 0.0) continue;
                    int best = (*arg)[oidx];
                    for (int j = 0; j < dh; ++j) {
                        int cidx = m * dh + j;
                        size_t pidx = ((size_t)ib * ec + cidx) * hw + k;
                        if (gp) gp[pidx] += go * sv[(size_t)best * ec + cidx];
                        if (gs) gs[(size_t)best * ec + cidx] += go * pv[pidx];
                    }
                }
    });
    auto pv = phi.data();
    auto sv = psi.data();
    auto ov = out.data_mut();
    for (int ib = 0; ib < b; ++ib)
        for (int m = 0; m < heads; ++m)
            for (int k = 0; k < hw; ++k) {
                double best = 0.0;
                int besti = 0;
                for (int in = 0; in < n; ++in) {
                    double acc = 0.0;
                    for (int j = 0; j < dh; ++j) {
                        int cidx = m * dh + j;
                        acc += pv[((size_t)ib * ec + cidx) * hw + k] * sv[(size_t)in * ec + cidx];
                    }
                    if (in == 0 || acc > best) {
                        best = acc;
                        besti = in;
                    }
                }
                size_t oidx = ((size_t)ib * heads + m) * hw + k;
                ov[oidx] = best;
                (*arg)[oidx] = besti;
            }
    return out;
}

Tensor add_head_bias(const Tensor& x, const Tensor& bias) {
    CG_CHECK(x.ndim() == 4 && bias.ndim() == 1 && bias.dim(0) == x.dim(1),
             "add_head_bias: bias must match channel count");
    int b = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    Tensor out = make_op(x.shape(), {x, bias}, [b, c, hw](detail::Node& nd) {
        if (double* g = grad_buf(parent(nd, 0)))
            for (size_t i = 0; i < nd.grad.size(); ++i) g[i] += nd.grad[i];
        if (double* g = grad_buf(parent(nd, 1)))
            for (int ib = 0; ib < b; ++ib)
                for (int ic = 0; ic < c; ++ic)
                    for (int k = 0; k < hw; ++k)
                        g[ic] += nd.grad[((size_t)ib * c + ic) * hw + k];
    });
    auto xv = x.data();
    auto bv = bias.data();
    auto ov = out.data_mut();
    for (int ib = 0; ib < b; ++ib)
        for (int ic = 0; ic < c; ++ic)
            for (int k = 0; k < hw; ++k)
                ov[((size_t)ib * c + ic) * hw + k] = xv[((size_t)ib * c + ic) * hw + k] + bv[ic];
    return out;
}

Tensor gather_locations(const Tensor& x, const std::vector<Loc>& locs) {
    CG_CHECK(x.ndim() == 4, "gather_locations expects 4d input");
    int b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    int p = (int)locs.size();
    CG_CHECK(p >= 1, "gather_locations: empty location list");
    for (const auto& l : locs)
        CG_CHECK(l.b >= 0 && l.b < b && l.i >= 0 && l.i < h && l.j >= 0 && l.j < w,
                 "gather_locations: location out of range");
    auto ls = std::make_shared<std::vector<Loc>>(locs);
    Tensor out = make_op({p, c}, {x}, [c, h, w, ls](detail::Node& nd) {
        if (double* g = grad_buf(parent(nd, 0)))
            for (size_t ip = 0; ip < ls->size(); ++ip) {
                const Loc& l = (*ls)[ip];
                for (int ic = 0; ic < c; ++ic)
                    g[(((size_t)l.b * c + ic) * h + l.i) * w + l.j] += nd.grad[ip * c + ic];
            }
    });
    auto xv = x.data();
    auto ov = out.data_mut();
    for (int ip = 0; ip < p; ++ip) {
        const Loc& l = locs[ip];
        for (int ic = 0; ic < c; ++ic)
            ov[(size_t)ip * c + ic] = xv[(((size_t)l.b * c + ic) * h + l.i) * w + l.j];
    }
    return out;
}

Tensor decode_box_rows(const Tensor& sides, std::span<const double> centers, double stride,
                       double clip_w, double clip_h) {
    CG_CHECK(sides.ndim() == 2 && sides.dim(1) == 4, "decode_box_rows expects [P,4] sides");
    int p = sides.dim(0);
    CG_CHECK((int)centers.size() == p * 2, "decode_box_rows: centers length mismatch");
    std::vector<double> cs(centers.begin(), centers.end());
    bool clip = clip_w >= 0.0 && clip_h >= 0.0;
    auto pass = std::make_shared<std::vector<char>>((size_t)p * 4, 1);
    Tensor out = make_op({p, 4}, {sides}, [p, stride, pass](detail::Node& nd) {
        if (double* g = grad_buf(parent(nd, 0)))
            for (int i = 0; i < p; ++i)
                for (int j = 0; j < 4; ++j)
                    if ((*pass)[(size_t)i * 4 + j]) {
                        double sgn = j < 2 ? -stride : stride;
                        g[i * 4 + j] += sgn * nd.grad[i * 4 + j];
                    }
    });
    auto sv = sides.data();
    auto ov = out.data_mut();
    for (int i = 0; i < p; ++i) {
        double cx = cs[i * 2], cy = cs[i * 2 + 1];
        double vals[4] = {cx - stride * sv[i * 4 + 0], cy - stride * sv[i * 4 + 1],
                          cx + stride * sv[i * 4 + 2], cy + stride * sv[i * 4 + 3]};
        for (int j = 0; j < 4; ++j) {
            double v = vals[j];
            if (clip) {
                double hi = (j % 2 == 0) ? clip_w : clip_h;
                double cl = std::clamp(v, 0.0, hi);
                (*pass)[(size_t)i * 4 + j] = (cl == v) ? 1 : 0;
                v = cl;
            }
            ov[i * 4 + j] = v;
        }
    }
    return out;
}

// ---- losses ----

Tensor bce_logits_weighted_sum(const Tensor& x, std::span<const double> targets,
                               std::span<const double> weights) {
    CG_CHECK((size_t)x.size() == targets.size() && targets.size() == weights.size(),
             "bce_logits_weighted_sum: length mismatch");
    std::vector<double> tv(targets.begin(), targets.end());
    std::vector<double> wv(weights.begin(), weights.end());
    Tensor out = make_op({1}, {x}, [tv, wv](detail::Node& nd) {
        auto xv = parent(nd, 0)->value.data();
        if (double* g = grad_buf(parent(nd, 0)))
            for (size_t i = 0; i < tv.size(); ++i) {
                double s = xv[i] >= 0 ? 1.0 / (1.0 + std::exp(-xv[i]))
                                      : std::exp(xv[i]) / (1.0 + std::exp(xv[i]));
                g[i] += nd.grad[0] * wv[i] * (s - tv[i]);
            }
    });
    auto xv = x.data();
    double acc = 0.0;
    for (size_t i = 0; i < tv.size(); ++i) {
        double v = xv[i];
        // stable: max(v,0) - v*t + log(1+exp(-|v|))
        acc += wv[i] * (std::max(v, 0.0) - v * tv[i] + std::log1p(std::exp(-std::abs(v))));
    }
    out.data_mut()[0] = acc;
    return out;
}

namespace {

struct BoxGrad {
    double d[4] = {0, 0, 0, 0};
};

// giou loss for one row; fills gradient wrt pred coords
double giou_loss_one(const double* p, const double* g, BoxGrad* bg) {
    double px1 = p[0], py1 = p[1], px2 = p[2], py2 = p[3];
    double gx1 = g[0], gy1 = g[1], gx2 = g[2], gy2 = g[3];
    double pw = px2 - px1, ph = py2 - py1;
    double ap = pw * ph;
    double ag = (gx2 - gx1) * (gy2 - gy1);
    double iw = std::min(px2, gx2) - std::max(px1, gx1);
    double ih = std::min(py2, gy2) - std::max(py1, gy1);
    bool overlap = iw > 0 && ih > 0;
    double inter = overlap ? iw * ih : 0.0;
    double uni = ap + ag - inter;
    double hx1 = std::min(px1, gx1), hy1 = std::min(py1, gy1);
    double hx2 = std::max(px2, gx2), hy2 = std::max(py2, gy2);
    double hw = hx2 - hx1, hh = hy2 - hy1;
    double hull = hw * hh;
    CG_CHECK(uni > 0 && hull > 0, "giou: degenerate boxes");
    double giou = inter / uni + uni / hull - 1.0;
    if (bg) {
        // total derivatives of giou wrt inter, ap, hull
        double d_inter = 1.0 / uni + inter / (uni * uni) - 1.0 / hull;
        double d_ap = -inter / (uni * uni) + 1.0 / hull;
        double d_hull = -uni / (hull * hull);
        double di[4] = {0, 0, 0, 0};
        if (overlap) {
            if (px1 > gx1) di[0] -= ih;
            if (py1 > gy1) di[1] -= iw;
            if (px2 < gx2) di[2] += ih;
            if (py2 < gy2) di[3] += iw;
        }
        double da[4] = {-ph, -pw, ph, pw};
        double dh[4] = {0, 0, 0, 0};
        if (px1 < gx1) dh[0] = -hh;
        if (py1 < gy1) dh[1] = -hw;
        if (px2 > gx2) dh[2] = hh;
        if (py2 > gy2) dh[3] = hw;
        for (int j = 0; j < 4; ++j)
            bg->d[j] = -(d_inter * di[j] + d_ap * da[j] + d_hull * dh[j]);
    }
    return 1.0 - giou;
}

}  // namespace

Tensor giou_loss_rows(const Tensor& pred, std::span<const double> gt) {
    CG_CHECK(pred.ndim() == 2 && pred.dim(1) == 4, "giou_loss_rows expects [P,4]");
    int p = pred.dim(0);
    CG_CHECK((int)gt.size() == p * 4, "giou_loss_rows: ground-truth length mismatch");
    std::vector<double> gv(gt.begin(), gt.end());
    Tensor out = make_op({p}, {pred}, [p, gv](detail::Node& nd) {
        auto pv = parent(nd, 0)->value.data();
        if (double* g = grad_buf(parent(nd, 0)))
            for (int i = 0; i < p; ++i) {
                BoxGrad bg;
                giou_loss_one(pv + (size_t)i * 4, gv.data() + (size_t)i * 4, &bg);
                for (int j = 0; j < 4; ++j) g[i * 4 + j] += nd.grad[i] * bg.d[j];
            }
    });
    auto pv = pred.data();
    auto ov = out.data_mut();
    for (int i = 0; i < p; ++i)
        ov[i] = giou_loss_one(pv.data() + (size_t)i * 4, gv.data() + (size_t)i * 4, nullptr);
    return out;
}

Tensor dfl_rows(const Tensor& logits, std::span<const double> targets) {
    CG_CHECK(logits.ndim() == 2, "dfl_rows expects a matrix of logits");
    int n = logits.dim(0), m = logits.dim(1);
    CG_CHECK((int)targets.size() == n, "dfl_rows: target count mismatch");
    int rmax = m - 1;
    for (double t : targets)
        CG_CHECK(t >= 0.0 && t <= (double)rmax, "dfl_rows: target outside bin range");
    std::vector<double> tv(targets.begin(), targets.end());
    auto probs = std::make_shared<std::vector<double>>((size_t)n * m);
    Tensor out = make_op({1}, {logits}, [n, m, tv, probs](detail::Node& nd) {
        if (double* g = grad_buf(parent(nd, 0))) {
            double inv = nd.grad[0] / n;
            for (int i = 0; i < n; ++i) {
                int lo = (int)std::floor(tv[i]);
                if (lo == m - 1) lo = m - 2;  // t == rmax falls to the last pair
                double wr = tv[i] - lo;
                double wl = 1.0 - wr;
                for (int j = 0; j < m; ++j) {
                    double target = (j == lo ? wl : 0.0) + (j == lo + 1 ? wr : 0.0);
                    g[i * m + j] += inv * ((*probs)[(size_t)i * m + j] - target);
                }
            }
        }
    });
    auto xv = logits.data();
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        const double* row = xv.data() + (size_t)i * m;
        double mx = row[0];
        for (int j = 1; j < m; ++j) mx = std::max(mx, row[j]);
        double z = 0.0;
        for (int j = 0; j < m; ++j) z += std::exp(row[j] - mx);
        double logz = std::log(z) + mx;
        for (int j = 0; j < m; ++j) (*probs)[(size_t)i * m + j] = std::exp(row[j] - logz);
        int lo = (int)std::floor(tv[i]);
        if (lo == m - 1) lo = m - 2;
        double wr = tv[i] - lo;
        double wl = 1.0 - wr;
        total += -(wl * (row[lo] - logz) + wr * (row[lo + 1] - logz));
    }
    out.data_mut()[0] = total / n;
    return out;
}

Tensor ce_spatial(const Tensor& logits, std::span<const int> labels) {
    CG_CHECK(logits.ndim() == 4, "ce_spatial expects 4d logits");
    int b = logits.dim(0), g = logits.dim(1), hw = logits.dim(2) * logits.dim(3);
    CG_CHECK((int)labels.size() == hw, "ce_spatial: label map size mismatch");
    for (int l : labels) CG_CHECK(l >= 0 && l < g, "ce_spatial: label out of range");
    std::vector<int> lv(labels.begin(), labels.end());
    auto probs = std::make_shared<std::vector<double>>(logits.size());
    int64_t cnt = (int64_t)b * hw;
    Tensor out = make_op({1}, {logits}, [b, g, hw, lv, probs, cnt](detail::Node& nd) {
        if (double* gr = grad_buf(parent(nd, 0))) {
            double inv = nd.grad[0] / cnt;
            for (int ib = 0; ib < b; ++ib)
                for (int k = 0; k < hw; ++k)
                    for (int ig = 0; ig < g; ++ig) {
                        size_t idx = ((size_t)ib * g + ig) * hw + k;
                        double target = ig == lv[k] ? 1.0 : 0.0;
                        gr[idx] += inv * ((*probs)[idx] - target);
                    }
        }
    });
    auto xv = logits.data();
    double total = 0.0;
    for (int ib = 0; ib < b; ++ib)
        for (int k = 0; k < hw; ++k) {
            double mx = xv[((size_t)ib * g) * hw + k];
            for (int ig = 1; ig < g; ++ig)
                mx = std::max(mx, xv[((size_t)ib * g + ig) * hw + k]);
            double z = 0.0;
            for (int ig = 0; ig < g; ++ig)
                z += std::exp(xv[((size_t)ib * g + ig) * hw + k] - mx);
            double logz = std::log(z) + mx;
            for (int ig = 0; ig < g; ++ig) {
                size_t idx = ((size_t)ib * g + ig) * hw + k;
                (*probs)[idx] = std::exp(xv[idx] - logz);
            }
            total += -(xv[((size_t)ib * g + lv[k]) * hw + k] - logz);
        }
    out.data_mut()[0] = total / cnt;
    return out;
}

// ---- finite-difference verification ----

double grad_check(const std::function<Tensor()>& f, Tensor point, double epsilon) {
    CG_CHECK(point.defined(), "grad_check: undefined point tensor");
    CG_CHECK(epsilon > 0, "grad_check: epsilon must be positive");
    point.set_requires_grad(true);
    point.zero_grad();
    Tensor loss = f();
    CG_CHECK(loss.size() == 1, "grad_check: objective must be scalar");
    loss.backward();
    std::vector<double> analytic(point.grad().begin(), point.grad().end());

    double worst = 0.0;
    auto pv = point.data_mut();
    for (size_t i = 0; i < pv.size(); ++i) {
        double keep = pv[i];
        double fp, fm;
        {
            NoGradGuard ng;
            pv[i] = keep + epsilon;
            fp = f().item();
            pv[i] = keep - epsilon;
            fm = f().item();
            pv[i] = keep;
        }
        double fd = (fp - fm) / (2.0 * epsilon);
        double err = std::abs(analytic[i] - fd) / std::max(1.0, std::abs(analytic[i]));
        if (!std::isfinite(err))
            throw NumericalError("grad_check: non-finite difference at coordinate " +
                                 std::to_string(i));
        worst = std::max(worst, err);
    }
    return worst;
}

}  // namespace cg
