#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "cg/common.hpp"
#include "cg/rng.hpp"

namespace cg {

// Dense row-major f64 tensor with reverse-mode differentiation.
//
// A Tensor is a cheap handle onto a graph node; ops build the graph and
// backward() walks it in reverse topological order. Gradients accumulate
// additively into every node that requires them.

using Shape = std::vector<int>;

int64_t numel(const Shape& s);

namespace detail {

struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // sized lazily on first accumulation
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;

    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    }
};

bool grad_enabled();

}  // namespace detail

// Disables graph recording in scope (inference / finite differences).
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape);
    static Tensor full(Shape shape, double v);
    static Tensor from(Shape shape, std::vector<double> data);
    static Tensor scalar(double v);
    static Tensor uniform(Shape shape, Rng& rng, double lo, double hi);
    static Tensor normal(Shape shape, Rng& rng, double stddev);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    int dim(int i) const;
    int ndim() const;
    int64_t size() const;

    std::span<const double> data() const;
    std::span<double> data_mut();  // for leaves: parameter updates, perturbations
    double item() const;           // scalar tensors only
    double at(std::initializer_list<int> idx) const;

    Tensor detached() const;  // value copy, no graph
    Tensor& set_requires_grad(bool b);
    bool requires_grad() const;
    std::span<const double> grad() const;
    void zero_grad();
    void backward();  // from a scalar root

    bool all_finite() const;

    detail::Node* node() const { return node_.get(); }

private:
    friend Tensor make_op(Shape shape, std::vector<Tensor> parents,
                          std::function<void(detail::Node&)> backward);
    std::shared_ptr<detail::Node> node_;
};

// Builds a graph node; `backward` may be empty for non-differentiable ops.
Tensor make_op(Shape shape, std::vector<Tensor> parents,
               std::function<void(detail::Node&)> backward);

// ---- elementwise ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& x);
Tensor scale(const Tensor& x, double c);
Tensor add_const(const Tensor& x, double c);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor exp_t(const Tensor& x);
Tensor log_t(const Tensor& x);

// scalar-tensor broadcasts (s has exactly one element)
Tensor mul_scalar_t(const Tensor& x, const Tensor& s);
Tensor add_scalar_t(const Tensor& x, const Tensor& s);

// ---- reductions / linear algebra ----
Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);
Tensor mean_rows(const Tensor& x);                      // [n,m] -> [m]
Tensor matmul(const Tensor& a, const Tensor& b);        // [m,k]x[k,n] -> [m,n]
Tensor transpose2d(const Tensor& x);                    // [m,n] -> [n,m]
Tensor add_row_vector(const Tensor& x, const Tensor& v);// [n,m]+[m]
Tensor softmax_rows(const Tensor& x);                   // [n,m]
Tensor dot_const(const Tensor& x, std::span<const double> c);  // [m] -> scalar
Tensor reshape(const Tensor& x, Shape shape);

// ---- conv / spatial ----
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int pad);
Tensor global_avg_pool(const Tensor& x);                // [B,C,H,W] -> [B,C]
Tensor channel_mean_max(const Tensor& x);               // [B,C,H,W] -> [B,2,H,W]
Tensor mul_channel_gate(const Tensor& x, const Tensor& g);   // g: [B,C]
Tensor mul_spatial_gate(const Tensor& x, const Tensor& g);   // g: [B,1,H,W]
Tensor mul_head_gate(const Tensor& x, const Tensor& g);      // g: [B,nh,H,W], nh | C
Tensor permute_channels(const Tensor& x, const std::vector<int>& perm);
Tensor l2_normalize_locations(const Tensor& x);         // per (b,h,w) across channels
Tensor l2_normalize_rows(const Tensor& x);              // zero rows stay zero
Tensor zero_pad_hw(const Tensor& x, int hp, int wp);    // pad bottom/right
Tensor replicate_pad_hw(const Tensor& x, int pad);      // pad all sides with edge values
Tensor crop_hw(const Tensor& x, int h, int w);

// Per-location low-rank channel map: out[.,:,h,w] = (x[.,:,h,w]^T A B)^T.
Tensor lora_delta(const Tensor& x, const Tensor& a, const Tensor& b);

// ---- patch routing ----
// Per-patch channel means; rows ordered (b, patch-row, patch-col). ph|H, pw|W.
Tensor patch_mean(const Tensor& x, int ph, int pw);  // [B,C,H,W] -> [B*nh*nw, C]
// out[i,j] = x[i, idx[i*k+j]]; backward scatters into the picked columns.
Tensor take_per_row(const Tensor& x, const std::vector<int>& idx, int k);
// Inverse layout of take_per_row: place w[i,j] at column idx[i*k+j] of an
// [n,m] zero matrix. Per-row indices must be distinct.
Tensor scatter_per_row(const Tensor& w, const std::vector<int>& idx, int m);
// Multiply every location of patch row(b,y,x) by g[row, col]; g: [B*nh*nw, m].
Tensor mul_patch_gate(const Tensor& x, const Tensor& g, int col, int ph, int pw);

// Batch standardization (no affine): per-channel zero mean / unit variance
// over batch x space. Batch statistics are written to mean/var for the
// caller's running buffers.
Tensor batch_standardize(const Tensor& x, double eps,
                         std::vector<double>* mean_out, std::vector<double>* var_out);
// Eval path: y[.,c,..] = (x - mean[c]) / sqrt(var[c] + eps) with constants.
Tensor standardize_const(const Tensor& x, std::span<const double> mean,
                         std::span<const double> var, double eps);

// ---- grounding-specific ----
// out[b,k,h,w] = <E[b,:,h,w], T[k,:]>, T is a frozen [K,D] buffer.
Tensor region_text_scores(const Tensor& e, std::span<const double> texts, int k_texts);
// A[b,m,h,w] = max_n <phi[b, m-slice, h, w], psi[n, m-slice]>
Tensor text_similarity_max(const Tensor& phi, const Tensor& psi, int heads);
Tensor add_head_bias(const Tensor& x, const Tensor& bias);  // x: [B,nh,H,W]

struct Loc {
    int b, i, j;
};
Tensor gather_locations(const Tensor& x, const std::vector<Loc>& locs);  // -> [P,C]

// sides [P,4] in stride units (l,t,r,b), centers flat [P*2] pixel coords.
// clip_w/clip_h < 0 disables clipping (training); >= 0 clamps to the image.
Tensor decode_box_rows(const Tensor& sides, std::span<const double> centers,
                       double stride, double clip_w, double clip_h);

// ---- losses ----
Tensor bce_logits_weighted_sum(const Tensor& x, std::span<const double> targets,
                               std::span<const double> weights);
Tensor giou_loss_rows(const Tensor& pred, std::span<const double> gt);  // [P,4] -> [P]
Tensor dfl_rows(const Tensor& logits, std::span<const double> targets); // mean scalar
Tensor ce_spatial(const Tensor& logits, std::span<const int> labels);   // [B,G,H,W]

// ---- finite-difference verification ----
// Max over coordinates of |analytic - central FD| / max(1, |analytic|).
double grad_check(const std::function<Tensor()>& f, Tensor point, double epsilon);

}  // namespace cg
