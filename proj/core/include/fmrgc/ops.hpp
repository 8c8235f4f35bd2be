#pragma once

#include <span>
#include <vector>

#include "fmrgc/tensor.hpp"

// Forward / backward kernels shared by the autodiff graph and by raw
// (non-differentiated) callers such as attacks and oracles. Backward
// kernels accumulate into their gradient outputs.
namespace fmrgc::ops {

void check_finite(const Tensor& t, const char* op);

// ---- elementwise -----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor neg(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor square(const Tensor& a);
Tensor relu(const Tensor& a);

// sign(0) = 0, so a zero gradient leaves FGSM a no-op.
Tensor sign(const Tensor& a);
Tensor clamp(const Tensor& a, double lo, double hi);

// a + c*b, elementwise; the attack inner-loop update.
Tensor axpy(const Tensor& a, double c, const Tensor& b);

// ---- matrix products (Eigen-backed) ----------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);     // [m,k] x [k,n]
Tensor matmul_tn(const Tensor& a, const Tensor& b);  // a^T x b, a is [k,m]
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // a x b^T, b is [n,k]

// ---- convolution (NCHW) -----------------------------------------------------

int conv_out_extent(int in, int kernel, int stride, int pad);

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor* bias, int stride, int pad);
void conv2d_backward(const Tensor& x, const Tensor& w, const Tensor& gout, int stride, int pad,
                     Tensor* gx, Tensor* gw, Tensor* gbias);

// ---- pooling ----------------------------------------------------------------

Tensor global_avg_pool(const Tensor& x);  // [N,C,H,W] -> [N,C]
void global_avg_pool_backward(const Tensor& gout, const std::vector<int>& x_shape, Tensor& gx);

Tensor block_avg_pool(const Tensor& x, int p);  // [N,C,H,W] -> [N,C,H/p,W/p]
void block_avg_pool_backward(const Tensor& gout, const std::vector<int>& x_shape, int p, Tensor& gx);

// ---- rows / bias ------------------------------------------------------------

Tensor add_row_bias(const Tensor& x, const Tensor& bias);  // [N,K] + [K]

// ---- classifier losses -------------------------------------------------------

Tensor softmax_rows(const Tensor& logits);  // log-sum-exp stabilized

// Mean cross-entropy over rows; grad is (softmax - onehot)/N.
double cross_entropy_mean(const Tensor& logits, std::span<const int> labels, Tensor* probs_out);
void cross_entropy_backward(const Tensor& probs, std::span<const int> labels, double gout, Tensor& glogits);

// Mean KL(softmax(p_logits) || softmax(q_logits)) over rows.
double kl_div_softmax_mean(const Tensor& p_logits, const Tensor& q_logits,
                           Tensor* p_probs_out, Tensor* q_probs_out, Tensor* row_kl_out);
void kl_div_softmax_backward(const Tensor& p_probs, const Tensor& q_probs, const Tensor& row_kl,
                             double gout, Tensor& gp_logits, Tensor& gq_logits);

// Mean over rows of (max_{k != y} z_k - z_y); ties resolved to the lower index.
double cw_margin_mean(const Tensor& logits, std::span<const int> labels, std::vector<int>* argmax_other);
void cw_margin_backward(std::span<const int> labels, std::span<const int> argmax_other, int num_classes,
                        double gout, Tensor& glogits);

double l2_norm(const Tensor& x);
double sum(const Tensor& x);

std::vector<int> argmax_rows(const Tensor& logits);

}  // namespace fmrgc::ops
