#include "fmrgc/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace fmrgc::ops {

namespace {

using MatrixMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ConstMatrixMap =
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b))
        throw ShapeMismatchError(std::string(op) + ": " + Tensor::shape_string(a.shape()) +
                                 " vs " + Tensor::shape_string(b.shape()));
}

void require_rank(const Tensor& t, int rank, const char* op) {
    if (t.rank() != rank)
        throw ShapeMismatchError(std::string(op) + ": expected rank " + std::to_string(rank) +
                                 ", got " + Tensor::shape_string(t.shape()));
}

Tensor map_unary(const Tensor& a, double (*f)(double)) {
    Tensor out(a.shape());
    const double* src = a.data();
    double* dst = out.data();
    for (std::size_t i = 0; i < a.size(); ++i) dst[i] = f(src[i]);
    return out;
}

// Unpacks the receptive fields of one sample into a [Cin*kh*kw, Ho*Wo] matrix.
void im2col(const double* x, int cin, int h, int w, int kh, int kw, int stride, int pad,
            int ho, int wo, double* col) {
    const int plane = h * w;
    for (int c = 0; c < cin; ++c) {
        for (int ki = 0; ki < kh; ++ki) {
            for (int kj = 0; kj < kw; ++kj) {
                double* row = col + ((c * kh + ki) * kw + kj) * (ho * wo);
                for (int oi = 0; oi < ho; ++oi) {
                    const int ii = oi * stride - pad + ki;
                    if (ii < 0 || ii >= h) {
                        std::fill(row + oi * wo, row + (oi + 1) * wo, 0.0);
                        continue;
                    }
                    const double* src = x + c * plane + ii * w;
                    for (int oj = 0; oj < wo; ++oj) {
                        const int jj = oj * stride - pad + kj;
                        row[oi * wo + oj] = (jj >= 0 && jj < w) ? src[jj] : 0.0;
                    }
                }
            }
        }
    }
}

void col2im_accumulate(const double* col, int cin, int h, int w, int kh, int kw, int stride,
                       int pad, int ho, int wo, double* gx) {
    const int plane = h * w;
    for (int c = 0; c < cin; ++c) {
        for (int ki = 0; ki < kh; ++ki) {
            for (int kj = 0; kj < kw; ++kj) {
                const double* row = col + ((c * kh + ki) * kw + kj) * (ho * wo);
                for (int oi = 0; oi < ho; ++oi) {
                    const int ii = oi * stride - pad + ki;
                    if (ii < 0 || ii >= h) continue;
                    double* dst = gx + c * plane + ii * w;
                    for (int oj = 0; oj < wo; ++oj) {
                        const int jj = oj * stride - pad + kj;
                        if (jj >= 0 && jj < w) dst[jj] += row[oi * wo + oj];
                    }
                }
            }
        }
    }
}

}  // namespace

void check_finite(const Tensor& t, const char* op) {
    for (double v : t.values()) {
        if (!std::isfinite(v))
            throw NonFiniteError(std::string(op) + " produced a non-finite value");
    }
}

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
    return out;
}

Tensor scale(const Tensor& a, double c) {
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * c;
    return out;
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor exp(const Tensor& a) { return map_unary(a, [](double v) { return std::exp(v); }); }

Tensor square(const Tensor& a) { return map_unary(a, [](double v) { return v * v; }); }

Tensor relu(const Tensor& a) {
    return map_unary(a, [](double v) { return v > 0.0 ? v : 0.0; });
}

Tensor sign(const Tensor& a) {
    return map_unary(a, [](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = std::min(std::max(a[i], lo), hi);
    return out;
}

Tensor axpy(const Tensor& a, double c, const Tensor& b) {
    require_same_shape(a, b, "axpy");
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + c * b[i];
    return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank(a, 2, "matmul");
    require_rank(b, 2, "matmul");
    if (a.dim(1) != b.dim(0))
        throw ShapeMismatchError("matmul: inner dimensions " + std::to_string(a.dim(1)) +
                                 " vs " + std::to_string(b.dim(0)));
    Tensor out({a.dim(0), b.dim(1)});
    ConstMatrixMap ma(a.data(), a.dim(0), a.dim(1));
    ConstMatrixMap mb(b.data(), b.dim(0), b.dim(1));
    MatrixMap mo(out.data(), out.dim(0), out.dim(1));
    mo.noalias() = ma * mb;
    return out;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
    require_rank(a, 2, "matmul_tn");
    require_rank(b, 2, "matmul_tn");
    if (a.dim(0) != b.dim(0)) throw ShapeMismatchError("matmul_tn: inner dimension mismatch");
    Tensor out({a.dim(1), b.dim(1)});
    ConstMatrixMap ma(a.data(), a.dim(0), a.dim(1));
    ConstMatrixMap mb(b.data(), b.dim(0), b.dim(1));
    MatrixMap mo(out.data(), out.dim(0), out.dim(1));
    mo.noalias() = ma.transpose() * mb;
    return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    require_rank(a, 2, "matmul_nt");
    require_rank(b, 2, "matmul_nt");
    if (a.dim(1) != b.dim(1)) throw ShapeMismatchError("matmul_nt: inner dimension mismatch");
    Tensor out({a.dim(0), b.dim(0)});
    ConstMatrixMap ma(a.data(), a.dim(0), a.dim(1));
    ConstMatrixMap mb(b.data(), b.dim(0), b.dim(1));
    MatrixMap mo(out.data(), out.dim(0), out.dim(1));
    mo.noalias() = ma * mb.transpose();
    return out;
}

int conv_out_extent(int in, int kernel, int stride, int pad) {
    return (in + 2 * pad - kernel) / stride + 1;
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor* bias, int stride, int pad) {
    require_rank(x, 4, "conv2d");
    require_rank(w, 4, "conv2d weight");
    const int n = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
    const int cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    if (w.dim(1) != cin) throw ShapeMismatchError("conv2d: channel mismatch");
    if (bias && (bias->rank() != 1 || bias->dim(0) != cout))
        throw ShapeMismatchError("conv2d: bias shape");
    const int ho = conv_out_extent(h, kh, stride, pad);
    const int wo = conv_out_extent(wd, kw, stride, pad);
    if (ho <= 0 || wo <= 0) throw ShapeMismatchError("conv2d: empty output extent");

    Tensor out({n, cout, ho, wo});
    const int patch = cin * kh * kw;
    std::vector<double> col(static_cast<std::size_t>(patch) * ho * wo);
    ConstMatrixMap wm(w.data(), cout, patch);
    for (int s = 0; s < n; ++s) {
        im2col(x.data() + static_cast<std::size_t>(s) * cin * h * wd, cin, h, wd, kh, kw, stride,
               pad, ho, wo, col.data());
        ConstMatrixMap cm(col.data(), patch, ho * wo);
        MatrixMap om(out.data() + static_cast<std::size_t>(s) * cout * ho * wo, cout, ho * wo);
        om.noalias() = wm * cm;
        if (bias) {
            for (int c = 0; c < cout; ++c) om.row(c).array() += (*bias)[static_cast<std::size_t>(c)];
        }
    }
    return out;
}

void conv2d_backward(const Tensor& x, const Tensor& w, const Tensor& gout, int stride, int pad,
                     Tensor* gx, Tensor* gw, Tensor* gbias) {
    const int n = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
    const int cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    const int ho = gout.dim(2), wo = gout.dim(3);
    const int patch = cin * kh * kw;

    std::vector<double> col(static_cast<std::size_t>(patch) * ho * wo);
    std::vector<double> gcol(static_cast<std::size_t>(patch) * ho * wo);
    ConstMatrixMap wm(w.data(), cout, patch);
    for (int s = 0; s < n; ++s) {
        ConstMatrixMap gm(gout.data() + static_cast<std::size_t>(s) * cout * ho * wo, cout, ho * wo);
        if (gx) {
            MatrixMap gcm(gcol.data(), patch, ho * wo);
            gcm.noalias() = wm.transpose() * gm;
            col2im_accumulate(gcol.data(), cin, h, wd, kh, kw, stride, pad, ho, wo,
                              gx->data() + static_cast<std::size_t>(s) * cin * h * wd);
        }
        if (gw) {
            im2col(x.data() + static_cast<std::size_t>(s) * cin * h * wd, cin, h, wd, kh, kw,
                   stride, pad, ho, wo, col.data());
            ConstMatrixMap cm(col.data(), patch, ho * wo);
            MatrixMap gwm(gw->data(), cout, patch);
            gwm.noalias() += gm * cm.transpose();
        }
        if (gbias) {
            for (int c = 0; c < cout; ++c) (*gbias)[static_cast<std::size_t>(c)] += gm.row(c).sum();
        }
    }
}

Tensor global_avg_pool(const Tensor& x) {
    require_rank(x, 4, "global_avg_pool");
    const int n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
    Tensor out({n, c});
    for (int s = 0; s < n; ++s) {
        for (int ch = 0; ch < c; ++ch) {
            const double* src = x.data() + (static_cast<std::size_t>(s) * c + ch) * plane;
            // Mean computed around the first element, so a constant map
            // averages to that constant without rounding.
            double acc = 0.0;
            for (int i = 1; i < plane; ++i) acc += src[i] - src[0];
            out[static_cast<std::size_t>(s) * c + ch] = src[0] + acc / plane;
        }
    }
    return out;
}

void global_avg_pool_backward(const Tensor& gout, const std::vector<int>& x_shape, Tensor& gx) {
    const int n = x_shape[0], c = x_shape[1], plane = x_shape[2] * x_shape[3];
    const double inv = 1.0 / plane;
    for (int s = 0; s < n; ++s) {
        for (int ch = 0; ch < c; ++ch) {
            const double g = gout[static_cast<std::size_t>(s) * c + ch] * inv;
            double* dst = gx.data() + (static_cast<std::size_t>(s) * c + ch) * plane;
            for (int i = 0; i < plane; ++i) dst[i] += g;
        }
    }
}

Tensor block_avg_pool(const Tensor& x, int p) {
    require_rank(x, 4, "block_avg_pool");
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (p <= 0 || h % p != 0 || w % p != 0)
        throw BadKernelError("block_avg_pool: kernel " + std::to_string(p) +
                             " does not divide " + std::to_string(h) + "x" + std::to_string(w));
    const int ho = h / p, wo = w / p;
    Tensor out({n, c, ho, wo});
    const double inv = 1.0 / (p * p);
    for (int s = 0; s < n; ++s) {
        for (int ch = 0; ch < c; ++ch) {
            const double* src = x.data() + (static_cast<std::size_t>(s) * c + ch) * h * w;
            double* dst = out.data() + (static_cast<std::size_t>(s) * c + ch) * ho * wo;
            for (int oi = 0; oi < ho; ++oi) {
                for (int oj = 0; oj < wo; ++oj) {
                    double acc = 0.0;
                    for (int di = 0; di < p; ++di) {
                        const double* row = src + (oi * p + di) * w + oj * p;
                        for (int dj = 0; dj < p; ++dj) acc += row[dj];
                    }
                    dst[oi * wo + oj] = acc * inv;
                }
            }
        }
    }
    return out;
}

void block_avg_pool_backward(const Tensor& gout, const std::vector<int>& x_shape, int p,
                             Tensor& gx) {
    const int n = x_shape[0], c = x_shape[1], h = x_shape[2], w = x_shape[3];
    const int ho = h / p, wo = w / p;
    const double inv = 1.0 / (p * p);
    for (int s = 0; s < n; ++s) {
        for (int ch = 0; ch < c; ++ch) {
            const double* g = gout.data() + (static_cast<std::size_t>(s) * c + ch) * ho * wo;
            double* dst = gx.data() + (static_cast<std::size_t>(s) * c + ch) * h * w;
            for (int oi = 0; oi < ho; ++oi) {
                for (int oj = 0; oj < wo; ++oj) {
                    const double v = g[oi * wo + oj] * inv;
                    for (int di = 0; di < p; ++di) {
                        double* row = dst + (oi * p + di) * w + oj * p;
                        for (int dj = 0; dj < p; ++dj) row[dj] += v;
                    }
                }
            }
        }
    }
}

Tensor add_row_bias(const Tensor& x, const Tensor& bias) {
    require_rank(x, 2, "add_row_bias");
    require_rank(bias, 1, "add_row_bias bias");
    if (x.dim(1) != bias.dim(0)) throw ShapeMismatchError("add_row_bias: width mismatch");
    Tensor out(x.shape());
    const int n = x.dim(0), k = x.dim(1);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < k; ++j)
            out[static_cast<std::size_t>(i) * k + j] = x[static_cast<std::size_t>(i) * k + j] + bias[static_cast<std::size_t>(j)];
    return out;
}

Tensor softmax_rows(const Tensor& logits) {
    require_rank(logits, 2, "softmax");
    const int n = logits.dim(0), k = logits.dim(1);
    Tensor out(logits.shape());
    for (int i = 0; i < n; ++i) {
        const double* row = logits.data() + static_cast<std::size_t>(i) * k;
        double* dst = out.data() + static_cast<std::size_t>(i) * k;
        double mx = row[0];
        for (int j = 1; j < k; ++j) mx = std::max(mx, row[j]);
        double denom = 0.0;
        for (int j = 0; j < k; ++j) {
            dst[j] = std::exp(row[j] - mx);
            denom += dst[j];
        }
        const double inv = 1.0 / denom;
        for (int j = 0; j < k; ++j) dst[j] *= inv;
    }
    return out;
}

double cross_entropy_mean(const Tensor& logits, std::span<const int> labels, Tensor* probs_out) {
    require_rank(logits, 2, "softmax_cross_entropy");
    const int n = logits.dim(0), k = logits.dim(1);
    if (static_cast<int>(labels.size()) != n)
        throw ShapeMismatchError("softmax_cross_entropy: label count mismatch");
    Tensor probs(logits.shape());
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        const double* row = logits.data() + static_cast<std::size_t>(i) * k;
        double* p = probs.data() + static_cast<std::size_t>(i) * k;
        double mx = row[0];
        for (int j = 1; j < k; ++j) mx = std::max(mx, row[j]);
        double denom = 0.0;
        for (int j = 0; j < k; ++j) {
            p[j] = std::exp(row[j] - mx);
            denom += p[j];
        }
        // CE_i = log(sum exp(z - mx)) - (z_y - mx)
        total += std::log(denom) - (row[labels[static_cast<std::size_t>(i)]] - mx);
        const double inv = 1.0 / denom;
        for (int j = 0; j < k; ++j) p[j] *= inv;
    }
    if (probs_out) *probs_out = std::move(probs);
    return total / n;
}

void cross_entropy_backward(const Tensor& probs, std::span<const int> labels, double gout,
                            Tensor& glogits) {
    const int n = probs.dim(0), k = probs.dim(1);
    const double g = gout / n;
    for (int i = 0; i < n; ++i) {
        const double* p = probs.data() + static_cast<std::size_t>(i) * k;
        double* dst = glogits.data() + static_cast<std::size_t>(i) * k;
        for (int j = 0; j < k; ++j) dst[j] += g * p[j];
        dst[labels[static_cast<std::size_t>(i)]] -= g;
    }
}

double kl_div_softmax_mean(const Tensor& p_logits, const Tensor& q_logits, Tensor* p_probs_out,
                           Tensor* q_probs_out, Tensor* row_kl_out) {
    require_same_shape(p_logits, q_logits, "kl_div_softmax");
    require_rank(p_logits, 2, "kl_div_softmax");
    const int n = p_logits.dim(0), k = p_logits.dim(1);
    Tensor p = softmax_rows(p_logits);
    Tensor q = softmax_rows(q_logits);
    Tensor row_kl({n});
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        const double* pi = p.data() + static_cast<std::size_t>(i) * k;
        const double* qi = q.data() + static_cast<std::size_t>(i) * k;
        double acc = 0.0;
        for (int j = 0; j < k; ++j) {
            // p and q come out of softmax strictly positive; log(p/q) is exactly
            // zero when the two distributions are bitwise equal.
            acc += pi[j] * (std::log(pi[j]) - std::log(qi[j]));
        }
        row_kl[static_cast<std::size_t>(i)] = acc;
        total += acc;
    }
    if (p_probs_out) *p_probs_out = std::move(p);
    if (q_probs_out) *q_probs_out = std::move(q);
    if (row_kl_out) *row_kl_out = std::move(row_kl);
    return total / n;
}

void kl_div_softmax_backward(const Tensor& p_probs, const Tensor& q_probs, const Tensor& row_kl,
                             double gout, Tensor& gp_logits, Tensor& gq_logits) {
    const int n = p_probs.dim(0), k = p_probs.dim(1);
    const double g = gout / n;
    for (int i = 0; i < n; ++i) {
        const double* pi = p_probs.data() + static_cast<std::size_t>(i) * k;
        const double* qi = q_probs.data() + static_cast<std::size_t>(i) * k;
        const double kl = row_kl[static_cast<std::size_t>(i)];
        double* gp = gp_logits.data() + static_cast<std::size_t>(i) * k;
        double* gq = gq_logits.data() + static_cast<std::size_t>(i) * k;
        for (int j = 0; j < k; ++j) {
            gp[j] += g * pi[j] * ((std::log(pi[j]) - std::log(qi[j])) - kl);
            gq[j] += g * (qi[j] - pi[j]);
        }
    }
}

double cw_margin_mean(const Tensor& logits, std::span<const int> labels,
                      std::vector<int>* argmax_other) {
    require_rank(logits, 2, "cw_margin");
    const int n = logits.dim(0), k = logits.dim(1);
    if (k < 2) throw ShapeMismatchError("cw_margin: needs at least 2 classes");
    std::vector<int> best(static_cast<std::size_t>(n), 0);
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        const double* row = logits.data() + static_cast<std::size_t>(i) * k;
        const int y = labels[static_cast<std::size_t>(i)];
        int arg = -1;
        double mx = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < k; ++j) {
            if (j == y) continue;
            if (row[j] > mx) {
                mx = row[j];
                arg = j;
            }
        }
        best[static_cast<std::size_t>(i)] = arg;
        total += mx - row[y];
    }
    if (argmax_other) *argmax_other = std::move(best);
    return total / n;
}

void cw_margin_backward(std::span<const int> labels, std::span<const int> argmax_other,
                        int num_classes, double gout, Tensor& glogits) {
    const int n = static_cast<int>(labels.size());
    const double g = gout / n;
    for (int i = 0; i < n; ++i) {
        glogits[static_cast<std::size_t>(i) * num_classes + argmax_other[static_cast<std::size_t>(i)]] += g;
        glogits[static_cast<std::size_t>(i) * num_classes + labels[static_cast<std::size_t>(i)]] -= g;
    }
}

double l2_norm(const Tensor& x) {
    double acc = 0.0;
    for (double v : x.values()) acc += v * v;
    return std::sqrt(acc);
}

double sum(const Tensor& x) {
    double acc = 0.0;
    for (double v : x.values()) acc += v;
    return acc;
}

std::vector<int> argmax_rows(const Tensor& logits) {
    const int n = logits.dim(0), k = logits.dim(1);
    std::vector<int> out(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const double* row = logits.data() + static_cast<std::size_t>(i) * k;
        int arg = 0;
        for (int j = 1; j < k; ++j)
            if (row[j] > row[arg]) arg = j;
        out[static_cast<std::size_t>(i)] = arg;
    }
    return out;
}

}  // namespace fmrgc::ops
