#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "fmrgc/attacks.hpp"
#include "fmrgc/ops.hpp"
#include "testers.hpp"

using namespace fmrgc;

namespace {

// z = x W + b on flattened inputs; closed-form gradients for the oracles.
class LinearTarget final : public AttackTarget {
  public:
    LinearTarget(Tensor weight, Tensor bias) : weight_(std::move(weight)), bias_(std::move(bias)) {}

    Var forward(Graph& g, Var x) const override {
        const int n = x.value().dim(0);
        const int features = static_cast<int>(x.value().size()) / n;
        Var flat = g.reshape(x, {n, features});
        return g.add_row_bias(g.matmul(flat, g.constant(weight_)), g.constant(bias_));
    }

  private:
    Tensor weight_;  // [features, classes]
    Tensor bias_;    // [classes]
};

// All logits frozen at zero: the input gradient vanishes everywhere.
class ConstantTarget final : public AttackTarget {
  public:
    explicit ConstantTarget(int classes) : classes_(classes) {}
    Var forward(Graph& g, Var x) const override {
        const int n = x.value().dim(0);
        Var flat = g.reshape(x, {n, static_cast<int>(x.value().size()) / n});
        Var zeroed = g.scale(flat, 0.0);
        return g.matmul(zeroed, g.constant(Tensor({flat.value().dim(1), classes_})));
    }

  private:
    int classes_;
};

Model tiny_model(std::uint64_t seed, bool with_slot = false) {
    BackboneConfig cfg;
    cfg.input_shape = {3, 16, 16};
    cfg.widths = {8, 12, 16};
    cfg.num_classes = 4;
    if (with_slot) {
        cfg.slots[0].enabled = true;
        cfg.slots[0].fmr.k = 3;
    }
    return Model(cfg, seed);
}

}  // namespace

TEST_CASE("project_linf clips to the budget and the clamp range") {
    Tensor x({2}, {0.5, 0.0});
    Tensor adv({2}, {0.9, -0.2});
    project_linf(adv, x, 0.1, 0.0, 1.0);
    CHECK(adv[0] == doctest::Approx(0.6).epsilon(1e-15));
    CHECK(adv[1] == 0.0);  // clamp dominates the lower budget edge

    Tensor bad({3});
    CHECK_THROWS_AS(project_linf(bad, x, 0.1, 0.0, 1.0), ShapeMismatchError);
}

TEST_CASE("projection bound holds for every element of a random batch") {
    Rng rng(107);
    Tensor x = testers::random_tensor({8, 3, 4, 4}, rng, 0.0, 1.0);
    Tensor adv = testers::random_tensor({8, 3, 4, 4}, rng, -0.5, 1.5);
    const double eps = 0.07;
    project_linf(adv, x, eps, 0.0, 1.0);
    for (std::size_t i = 0; i < x.size(); ++i) {
        CHECK(std::abs(adv[i] - x[i]) <= eps + 1e-12);
        CHECK(adv[i] >= 0.0);
        CHECK(adv[i] <= 1.0);
    }
}

TEST_CASE("fgsm with a zero gradient returns the input unchanged") {
    ConstantTarget target(3);
    Rng rng(109);
    Tensor x = testers::random_tensor({4, 2, 3, 3}, rng, 0.1, 0.9);
    Tensor adv = fgsm(target, x, {0, 1, 2, 0}, 0.1);
    CHECK(adv.bit_equal(x));
}

TEST_CASE("fgsm on a monotone scalar model steps by exactly epsilon") {
    // Two classes on one feature; CE gradient w.r.t. x points along
    // w_1 - w_0, positive here, so the signed step is +epsilon.
    LinearTarget target(Tensor({1, 2}, {0.0, 3.0}), Tensor({2}));
    Tensor x({1, 1}, {0.4});
    std::vector<int> y{0};
    Tensor adv = fgsm(target, x, y, 0.1);
    CHECK(adv[0] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("pgd with one unclipped step and no init equals fgsm bit-for-bit") {
    Model m = tiny_model(5, true);
    Rng rng(113);
    Tensor x = testers::random_tensor({6, 3, 16, 16}, rng, 0.0, 1.0);
    std::vector<int> y = testers::random_labels(6, 4, rng);

    const double eps = 8.0 / 255.0;
    AttackConfig cfg;
    cfg.epsilon = eps;
    cfg.step_size = eps;
    cfg.steps = 1;
    cfg.random_init = false;
    AdversarialBatch batch = pgd_attack(m, x, y, cfg);
    Tensor via_fgsm = fgsm(m, x, y, eps);
    CHECK(batch.adv.bit_equal(via_fgsm));
}

TEST_CASE("pgd keeps every iterate inside the ball and the clamp range") {
    Model m = tiny_model(7);
    Rng rng(127);
    Tensor x = testers::random_tensor({5, 3, 16, 16}, rng, 0.0, 1.0);
    std::vector<int> y = testers::random_labels(5, 4, rng);

    AttackConfig cfg = AttackConfig::pgd(10);
    cfg.seed = 99;
    AdversarialBatch batch = pgd_attack(m, x, y, cfg);
    for (std::size_t i = 0; i < x.size(); ++i) {
        CHECK(std::abs(batch.adv[i] - x[i]) <= cfg.epsilon + 1e-12);
        CHECK(batch.adv[i] >= 0.0);
        CHECK(batch.adv[i] <= 1.0);
    }
}

TEST_CASE("pgd is deterministic under a fixed seed") {
    Model m = tiny_model(11);
    Rng rng(131);
    Tensor x = testers::random_tensor({4, 3, 16, 16}, rng, 0.0, 1.0);
    std::vector<int> y = testers::random_labels(4, 4, rng);

    AttackConfig cfg = AttackConfig::pgd(5);
    cfg.seed = 1234;
    AdversarialBatch a = pgd_attack(m, x, y, cfg);
    AdversarialBatch b = pgd_attack(m, x, y, cfg);
    CHECK(a.adv.bit_equal(b.adv));
    CHECK(a.success == b.success);

    cfg.seed = 4321;
    AdversarialBatch c = pgd_attack(m, x, y, cfg);
    CHECK_FALSE(a.adv.bit_equal(c.adv));
}

TEST_CASE("cw margin loss gradient on a two-class linear model") {
    // margin = z_1 - z_0 = x (w_1 - w_0); gradient w.r.t. x is w_1 - w_0.
    Tensor w({3, 2}, {1.0, 2.0,
                      0.0, -1.0,
                      4.0, 1.0});
    LinearTarget target(w, Tensor({2}));
    Rng rng(137);
    Tensor x = testers::random_tensor({1, 3}, rng);
    Tensor grad = input_gradient(target, x, {0}, AttackLoss::CwMargin);
    CHECK(grad[0] == doctest::Approx(2.0 - 1.0).epsilon(1e-12));
    CHECK(grad[1] == doctest::Approx(-1.0 - 0.0).epsilon(1e-12));
    CHECK(grad[2] == doctest::Approx(1.0 - 4.0).epsilon(1e-12));
}

TEST_CASE("cw margin loss is positive on an already-misclassified input") {
    LinearTarget target(Tensor({1, 2}, {0.0, 1.0}), Tensor({2}));
    Tensor x({1, 1}, {2.0});  // logits (0, 2): class 1 wins, true label 0
    Graph g;
    Var logits = target.forward(g, g.leaf(x, false));
    Var loss = g.cw_margin(logits, {0});
    CHECK(loss.value().item() > 0.0);

    AttackConfig cfg = AttackConfig::cw(3, 0.1);
    cfg.clamp_lo = -10.0;
    cfg.clamp_hi = 10.0;
    AdversarialBatch batch = cw_margin_attack(target, x, {0}, cfg);
    CHECK(std::abs(batch.adv[0] - x[0]) <= cfg.epsilon + 1e-12);
}

TEST_CASE("transfer attack with source == target equals the white-box result") {
    Model m = tiny_model(13);
    Rng rng(139);
    Tensor x = testers::random_tensor({6, 3, 16, 16}, rng, 0.0, 1.0);
    std::vector<int> y = testers::random_labels(6, 4, rng);

    AttackConfig cfg = AttackConfig::pgd(5);
    cfg.seed = 7;
    AdversarialBatch batch = pgd_attack(m, x, y, cfg);
    const double white_box = m.accuracy(batch.adv, y);
    CHECK(transfer_attack(m, m, x, y, cfg) == doctest::Approx(white_box).epsilon(1e-15));
}

TEST_CASE("adversarial batch export round-trips through float32") {
    Model m = tiny_model(17);
    Rng rng(149);
    Tensor x = testers::random_tensor({3, 3, 16, 16}, rng, 0.0, 1.0);
    std::vector<int> y = testers::random_labels(3, 4, rng);
    AttackConfig cfg = AttackConfig::pgd(3);
    AdversarialBatch batch = pgd_attack(m, x, y, cfg);

    namespace fs = std::filesystem;
    const std::string base = (fs::temp_directory_path() / "fmrgc_adv_batch").string();
    save_adversarial_batch(batch, cfg, "pgd", base);
    AdversarialBatch loaded = load_adversarial_batch(base);
    CHECK(loaded.labels == batch.labels);
    REQUIRE(loaded.adv.shape() == batch.adv.shape());
    for (std::size_t i = 0; i < batch.adv.size(); ++i)
        CHECK(loaded.adv[i] == doctest::Approx(batch.adv[i]).epsilon(1e-6));
}
