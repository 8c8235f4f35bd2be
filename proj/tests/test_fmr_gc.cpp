#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "fmrgc/fmr_gc.hpp"
#include "fmrgc/grad_check.hpp"
#include "fmrgc/ops.hpp"
#include "testers.hpp"

using namespace fmrgc;

namespace {

// Straight-line dense reference: descriptors, similarity, top-k, normalized
// propagation and the matrix chain, all with naive loops. Shares nothing
// with the library path beyond the config.
Tensor dense_oracle(const Tensor& x_chw, const Tensor& theta2, const FmrGcConfig& cfg) {
    const int c = x_chw.dim(0), h = x_chw.dim(1), w = x_chw.dim(2);
    const int d = h * w;

    std::vector<double> p;
    if (c == 1) {
        p = {1.0};
    } else {
        // global-average descriptors (oracle used with GlobalAvg configs)
        std::vector<double> desc(static_cast<std::size_t>(c), 0.0);
        for (int ch = 0; ch < c; ++ch) {
            double acc = 0.0;
            for (int t = 0; t < d; ++t) acc += x_chw[static_cast<std::size_t>(ch) * d + t];
            desc[static_cast<std::size_t>(ch)] = acc / d;
        }
        std::vector<double> sq_dists;
        for (int i = 0; i < c; ++i)
            for (int j = i + 1; j < c; ++j) {
                const double diff = desc[static_cast<std::size_t>(i)] - desc[static_cast<std::size_t>(j)];
                sq_dists.push_back(diff * diff);
            }
        std::sort(sq_dists.begin(), sq_dists.end());
        double sigma_sq;
        if (cfg.sigma.kind == SigmaRule::Kind::Fixed) {
            sigma_sq = cfg.sigma.fixed_value;
        } else {
            const std::size_t n = sq_dists.size();
            sigma_sq = (n % 2 == 1) ? sq_dists[n / 2]
                                    : 0.5 * (sq_dists[n / 2 - 1] + sq_dists[n / 2]);
            if (sigma_sq <= 0.0) sigma_sq = 1.0;
        }

        std::vector<double> sim(static_cast<std::size_t>(c) * c,
                                -std::numeric_limits<double>::max());
        for (int i = 0; i < c; ++i)
            for (int j = 0; j < c; ++j) {
                if (i == j) continue;
                const double diff = desc[static_cast<std::size_t>(i)] - desc[static_cast<std::size_t>(j)];
                sim[static_cast<std::size_t>(i) * c + j] = std::exp(-diff * diff / sigma_sq);
            }

        std::vector<std::uint8_t> adj(static_cast<std::size_t>(c) * c, 0);
        for (int i = 0; i < c; ++i) {
            std::vector<bool> taken(static_cast<std::size_t>(c), false);
            taken[static_cast<std::size_t>(i)] = true;
            for (int round = 0; round < cfg.k; ++round) {
                int best = -1;
                for (int j = 0; j < c; ++j) {
                    if (taken[static_cast<std::size_t>(j)]) continue;
                    if (best < 0 || sim[static_cast<std::size_t>(i) * c + j] >
                                        sim[static_cast<std::size_t>(i) * c + best])
                        best = j;
                }
                taken[static_cast<std::size_t>(best)] = true;
                adj[static_cast<std::size_t>(i) * c + best] = 1;
            }
        }
        for (int i = 0; i < c; ++i)
            for (int j = 0; j < c; ++j)
                if (adj[static_cast<std::size_t>(i) * c + j]) adj[static_cast<std::size_t>(j) * c + i] = 1;

        std::vector<double> deg(static_cast<std::size_t>(c), 1.0);
        for (int i = 0; i < c; ++i)
            for (int j = 0; j < c; ++j)
                if (adj[static_cast<std::size_t>(i) * c + j]) deg[static_cast<std::size_t>(i)] += 1.0;
        p.assign(static_cast<std::size_t>(c) * c, 0.0);
        for (int i = 0; i < c; ++i)
            for (int j = 0; j < c; ++j) {
                const bool connected = (i == j) || adj[static_cast<std::size_t>(i) * c + j];
                if (connected)
                    p[static_cast<std::size_t>(i) * c + j] =
                        1.0 / std::sqrt(deg[static_cast<std::size_t>(i)] * deg[static_cast<std::size_t>(j)]);
            }
    }

    // relu(P F theta2) + F, all naive
    const std::vector<double> f(x_chw.data(), x_chw.data() + x_chw.size());
    const std::vector<double> pf = testers::naive_matmul(p, f, c, c, d);
    const std::vector<double> pft = testers::naive_matmul(
        pf, std::vector<double>(theta2.data(), theta2.data() + theta2.size()), c, d, d);
    Tensor out({c, h, w});
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = (pft[i] > 0.0 ? pft[i] : 0.0) + f[i];
    return out;
}

// A point is topology-stable when fd probes cannot flip the top-k selection;
// resampled inputs guarantee the relu pre-activations sit away from zero too.
bool stable_for_grad_check(const Tensor& x, const Tensor& theta2, const FmrGcConfig& cfg,
                           double margin) {
    PropagationMatrix p = build_propagation(x, cfg);
    GraphSignal f = flatten_to_signal(x);
    Tensor z = ops::matmul(ops::matmul(p.to_tensor(), f.matrix), theta2);
    for (double v : z.values())
        if (std::abs(v) < margin) return false;

    DescriptorSet d = channel_descriptors(x, cfg.pooling);
    SimilarityMatrix s = similarity_matrix(d, cfg.sigma.kind == SigmaRule::Kind::Median
                                                  ? sigma_from_descriptors(d)
                                                  : cfg.sigma.fixed_value);
    // gap between the k-th and (k+1)-th similarity per row
    for (int i = 0; i < d.count; ++i) {
        std::vector<double> row;
        for (int j = 0; j < d.count; ++j)
            if (j != i) row.push_back(s.at(i, j));
        std::sort(row.rbegin(), row.rend());
        if (static_cast<int>(row.size()) > cfg.k &&
            row[static_cast<std::size_t>(cfg.k - 1)] - row[static_cast<std::size_t>(cfg.k)] < margin)
            return false;
    }
    return true;
}

}  // namespace

TEST_CASE("graph signal: singleton and layout") {
    GraphSignal s1 = flatten_to_signal(Tensor({1, 1, 1}, {42.0}));
    CHECK(s1.matrix.shape() == std::vector<int>{1, 1});
    CHECK(s1.matrix[0] == 42.0);

    Tensor x({2, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
    GraphSignal s2 = flatten_to_signal(x);
    CHECK(s2.matrix.shape() == std::vector<int>{2, 4});
    CHECK(s2.matrix[0] == 1.0);   // row 0 = channel 0, row-major pixels
    CHECK(s2.matrix[3] == 4.0);
    CHECK(s2.matrix[4] == 5.0);   // row 1 = channel 1
}

TEST_CASE("graph signal: flatten/reshape is a bit-exact inverse") {
    Rng rng(73);
    Tensor x = testers::random_tensor({4, 3, 3}, rng);
    GraphSignal s = flatten_to_signal(x);
    CHECK(reshape_from_signal(s).bit_equal(x));
}

TEST_CASE("zero theta2 is a bit-exact identity") {
    Rng rng(79);
    for (int trial = 0; trial < 20; ++trial) {
        const int c = rng.uniform_int(1, 6);
        const int h = rng.uniform_int(1, 4);
        const int w = rng.uniform_int(1, 4);
        Tensor x = testers::random_tensor({c, h, w}, rng);
        FmrGcParams params;
        params.theta2 = Tensor({h * w, h * w});
        params.cfg.k = std::max(1, std::min(2, c - 1));
        if (c == 1) params.cfg.k = 1;
        Tensor out = fmr_gc_forward(x, params);
        CHECK(out.bit_equal(x));
    }
}

TEST_CASE("single-channel forward reduces to the dense 1-node formula") {
    Rng rng(83);
    Tensor x = testers::random_tensor({1, 2, 2}, rng);
    Tensor theta = testers::random_tensor({4, 4}, rng);
    FmrGcParams params{theta, FmrGcConfig{}};
    Tensor out = fmr_gc_forward(x, params);
    Tensor expect = dense_oracle(x, theta, params.cfg);
    CHECK(testers::max_abs_diff(out, expect) < 1e-12);
}

TEST_CASE("forward matches the dense matrix-chain oracle") {
    Rng rng(89);
    for (int trial = 0; trial < 30; ++trial) {
        const int c = rng.uniform_int(2, 8);
        const int h = rng.uniform_int(1, 4);
        const int w = rng.uniform_int(1, 4);
        FmrGcConfig cfg;
        cfg.k = rng.uniform_int(1, c - 1);
        Tensor x = testers::random_tensor({c, h, w}, rng);
        Tensor theta = testers::random_tensor({h * w, h * w}, rng);
        Tensor out = fmr_gc_forward(x, FmrGcParams{theta, cfg});
        Tensor expect = dense_oracle(x, theta, cfg);
        CHECK(testers::max_abs_diff(out, expect) < 1e-10);
    }
}

TEST_CASE("graph and raw forwards agree, and the layer keeps shape") {
    Rng rng(97);
    const int c = 4, h = 3, w = 3;
    FmrGcConfig cfg;
    cfg.k = 2;
    Tensor x = testers::random_tensor({c, h, w}, rng);
    Tensor theta = testers::random_tensor({9, 9}, rng);

    Tensor raw = fmr_gc_forward(x, FmrGcParams{theta, cfg});
    Graph g;
    Var out = fmr_gc_forward(g, g.leaf(x, true), g.leaf(theta, true), cfg);
    CHECK(out.value().shape() == std::vector<int>{c, h, w});
    CHECK(out.value().bit_equal(raw));
}

TEST_CASE("layer gradients pass finite differences at topology-stable points") {
    FmrGcConfig cfg;
    cfg.k = 2;
    const int c = 4, h = 3, w = 3, d = 9;

    Rng rng(101);
    Tensor x, theta;
    int attempts = 0;
    do {
        x = testers::random_tensor({c, h, w}, rng, 0.1, 2.0);
        // spread the channel means so similarity gaps stay wide
        for (int ch = 0; ch < c; ++ch)
            for (int t = 0; t < d; ++t) x[static_cast<std::size_t>(ch) * d + t] += 0.8 * ch;
        theta = testers::random_tensor({d, d}, rng, -0.8, 0.8);
        REQUIRE(++attempts < 50);
    } while (!stable_for_grad_check(x, theta, cfg, 1e-3));

    Tensor weights = testers::random_tensor({c, h, w}, rng);
    const double step = 1e-5, tol = 1e-4;

    const FdReport wrt_x = finite_difference_check(
        [&](Graph& g, Var v) {
            Var out = fmr_gc_forward(g, v, g.constant(theta), cfg);
            return g.sum(g.mul(out, g.constant(weights)));
        },
        x, step);
    INFO("w.r.t. X rel err " << wrt_x.max_rel_err);
    CHECK(wrt_x.pass(tol));

    const FdReport wrt_theta = finite_difference_check(
        [&](Graph& g, Var v) {
            Var out = fmr_gc_forward(g, g.constant(x), v, cfg);
            return g.sum(g.mul(out, g.constant(weights)));
        },
        theta, step);
    INFO("w.r.t. theta2 rel err " << wrt_theta.max_rel_err);
    CHECK(wrt_theta.pass(tol));
}

TEST_CASE("channel permutation permutes the output identically") {
    Rng rng(103);
    const int c = 6, h = 2, w = 2, d = 4;
    FmrGcConfig cfg;
    cfg.k = 2;
    Tensor x = testers::random_tensor({c, h, w}, rng);
    Tensor theta = testers::random_tensor({d, d}, rng);

    std::vector<int> perm{3, 0, 5, 1, 4, 2};
    Tensor permuted({c, h, w});
    for (int i = 0; i < c; ++i)
        std::copy_n(x.data() + static_cast<std::size_t>(perm[static_cast<std::size_t>(i)]) * d, d,
                    permuted.data() + static_cast<std::size_t>(i) * d);

    Tensor out = fmr_gc_forward(x, FmrGcParams{theta, cfg});
    Tensor out_perm = fmr_gc_forward(permuted, FmrGcParams{theta, cfg});
    for (int i = 0; i < c; ++i)
        for (int t = 0; t < d; ++t)
            CHECK(out_perm[static_cast<std::size_t>(i) * d + t] ==
                  doctest::Approx(out[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)]) * d + t])
                      .epsilon(1e-12));
}

TEST_CASE("theta2 initialization: bounds, determinism, near-zero mean") {
    Tensor t1 = init_theta(1, 7);
    CHECK(std::abs(t1[0]) <= std::sqrt(3.0));

    Tensor a = init_theta(24, 12345);
    Tensor b = init_theta(24, 12345);
    CHECK(a.bit_equal(b));

    const int d = 40;
    Tensor big = init_theta(d, 99);
    const double bound = std::sqrt(6.0 / (d + d));
    double mean = 0.0;
    for (double v : big.values()) {
        CHECK(std::abs(v) <= bound);
        mean += v;
    }
    mean /= static_cast<double>(big.size());
    const double stderr3 = 3.0 * (bound / std::sqrt(3.0)) / std::sqrt(static_cast<double>(big.size()));
    CHECK(std::abs(mean) <= stderr3);
}

TEST_CASE("extra parameter count is d squared") {
    CHECK(extra_param_count(4) == 16);
    CHECK(extra_param_count(1024) == 1048576);
    CHECK(extra_param_count(1) == 1);
}

TEST_CASE("shape mismatch between theta2 and the spatial size is rejected") {
    Tensor x({2, 3, 3});
    FmrGcParams params;
    params.theta2 = Tensor({4, 4});
    params.cfg.k = 1;
    CHECK_THROWS_AS((void)fmr_gc_forward(x, params), ShapeMismatchError);
}
