#include <doctest.h>

#include <cmath>

#include "fmrgc/ops.hpp"
#include "fmrgc/tensor.hpp"
#include "testers.hpp"

using namespace fmrgc;

TEST_CASE("tensor shape bookkeeping") {
    Tensor t({2, 3});
    CHECK(t.size() == 6);
    CHECK(t.rank() == 2);
    CHECK_THROWS_AS(Tensor({2, 3}, {1.0, 2.0}), ShapeMismatchError);
    CHECK_THROWS_AS(Tensor({0, 3}), ShapeMismatchError);
    CHECK_THROWS_AS(t.reshaped({4, 2}), ShapeMismatchError);
    CHECK(t.reshaped({3, 2}).dim(0) == 3);
    CHECK_THROWS_AS(t.item(), NotScalarError);
}

TEST_CASE("relu and sign definitions") {
    Tensor x({3}, {-1.0, 0.0, 2.0});
    Tensor r = ops::relu(x);
    CHECK(r[0] == 0.0);
    CHECK(r[1] == 0.0);
    CHECK(r[2] == 2.0);

    Tensor s = ops::sign(x);
    CHECK(s[0] == -1.0);
    CHECK(s[1] == 0.0);  // sign(0) = 0 keeps a zero-gradient FGSM a no-op
    CHECK(s[2] == 1.0);
}

TEST_CASE("global average pool of a 2x2 map") {
    Tensor x({1, 1, 2, 2}, {1.0, 2.0, 3.0, 4.0});
    CHECK(ops::global_avg_pool(x)[0] == 2.5);
}

TEST_CASE("global average pool of a constant map is exact") {
    Rng rng(7);
    for (int trial = 0; trial < 10; ++trial) {
        const double c = rng.uniform(-5.0, 5.0);
        Tensor x = Tensor::full({2, 3, 4, 4}, c);
        Tensor pooled = ops::global_avg_pool(x);
        for (std::size_t i = 0; i < pooled.size(); ++i) CHECK(pooled[i] == c);
    }
}

TEST_CASE("block average pool matches the double-loop oracle") {
    Rng rng(11);
    Tensor x = testers::random_tensor({1, 3, 8, 8}, rng);
    Tensor pooled = ops::block_avg_pool(x, 4);
    CHECK(pooled.shape() == std::vector<int>{1, 3, 2, 2});
    for (int c = 0; c < 3; ++c)
        for (int bi = 0; bi < 2; ++bi)
            for (int bj = 0; bj < 2; ++bj) {
                double acc = 0.0;
                for (int i = 0; i < 4; ++i)
                    for (int j = 0; j < 4; ++j)
                        acc += x[static_cast<std::size_t>(c) * 64 + (bi * 4 + i) * 8 + bj * 4 + j];
                const double expect = acc / 16.0;
                CHECK(pooled[static_cast<std::size_t>(c) * 4 + bi * 2 + bj] ==
                      doctest::Approx(expect).epsilon(1e-12));
            }
    CHECK_THROWS_AS(ops::block_avg_pool(x, 3), BadKernelError);
}

TEST_CASE("cross entropy of uniform logits is ln(num_classes)") {
    Tensor logits({1, 10});
    for (int label = 0; label < 10; ++label) {
        std::vector<int> y{label};
        const double ce = ops::cross_entropy_mean(logits, y, nullptr);
        CHECK(ce == doctest::Approx(std::log(10.0)).epsilon(1e-12));
    }
}

TEST_CASE("cross entropy is non-negative on random logits") {
    Rng rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        Tensor logits = testers::random_normal_tensor({4, 7}, rng, 3.0);
        std::vector<int> y = testers::random_labels(4, 7, rng);
        CHECK(ops::cross_entropy_mean(logits, y, nullptr) >= 0.0);
    }
}

TEST_CASE("KL of a distribution against itself is exactly zero") {
    Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor logits = testers::random_normal_tensor({3, 6}, rng, 4.0);
        CHECK(ops::kl_div_softmax_mean(logits, logits, nullptr, nullptr, nullptr) == 0.0);
    }
}

TEST_CASE("matmul agrees with the naive triple loop") {
    Rng rng(13);
    Tensor a = testers::random_tensor({5, 4}, rng);
    Tensor b = testers::random_tensor({4, 6}, rng);
    Tensor c = ops::matmul(a, b);
    const std::vector<double> expect = testers::naive_matmul(
        std::vector<double>(a.data(), a.data() + a.size()),
        std::vector<double>(b.data(), b.data() + b.size()), 5, 4, 6);
    for (std::size_t i = 0; i < c.size(); ++i)
        CHECK(c[i] == doctest::Approx(expect[i]).epsilon(1e-12));
    CHECK_THROWS_AS(ops::matmul(a, a), ShapeMismatchError);
}

TEST_CASE("conv2d matches a direct correlation oracle") {
    Rng rng(17);
    const int n = 2, cin = 3, h = 5, w = 5, cout = 4, kh = 3, kw = 3;
    Tensor x = testers::random_tensor({n, cin, h, w}, rng);
    Tensor weight = testers::random_tensor({cout, cin, kh, kw}, rng);
    Tensor bias = testers::random_tensor({cout}, rng);

    for (int stride : {1, 2}) {
        for (int pad : {0, 1}) {
            Tensor out = ops::conv2d(x, weight, &bias, stride, pad);
            const int ho = ops::conv_out_extent(h, kh, stride, pad);
            const int wo = ops::conv_out_extent(w, kw, stride, pad);
            REQUIRE(out.shape() == std::vector<int>{n, cout, ho, wo});
            for (int s = 0; s < n; ++s)
                for (int co = 0; co < cout; ++co)
                    for (int oi = 0; oi < ho; ++oi)
                        for (int oj = 0; oj < wo; ++oj) {
                            double acc = bias[static_cast<std::size_t>(co)];
                            for (int ci = 0; ci < cin; ++ci)
                                for (int ki = 0; ki < kh; ++ki)
                                    for (int kj = 0; kj < kw; ++kj) {
                                        const int ii = oi * stride - pad + ki;
                                        const int jj = oj * stride - pad + kj;
                                        if (ii < 0 || ii >= h || jj < 0 || jj >= w) continue;
                                        acc += x[((static_cast<std::size_t>(s) * cin + ci) * h + ii) * w + jj] *
                                               weight[((static_cast<std::size_t>(co) * cin + ci) * kh + ki) * kw + kj];
                                    }
                            const double got =
                                out[((static_cast<std::size_t>(s) * cout + co) * ho + oi) * wo + oj];
                            CHECK(got == doctest::Approx(acc).epsilon(1e-12));
                        }
        }
    }
}

TEST_CASE("cw margin picks the runner-up logit with ties to the lower index") {
    Tensor logits({2, 4}, {1.0, 5.0, 5.0, 0.0,   // true class 0: other max 5 at index 1 (tie)
                           2.0, 1.0, 0.0, 2.0});  // true class 3: other max 2 at index 0
    std::vector<int> y{0, 3};
    std::vector<int> argmax_other;
    const double margin = ops::cw_margin_mean(logits, y, &argmax_other);
    CHECK(argmax_other[0] == 1);
    CHECK(argmax_other[1] == 0);
    CHECK(margin == doctest::Approx(((5.0 - 1.0) + (2.0 - 2.0)) / 2.0).epsilon(1e-12));
}

TEST_CASE("non-finite detection") {
    Tensor bad({2}, {1.0, std::numeric_limits<double>::infinity()});
    CHECK_THROWS_AS(ops::check_finite(bad, "test"), NonFiniteError);
}
