#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fmrgc/model.hpp"
#include "fmrgc/tensor.hpp"

namespace fmrgc {

// Anything attackable: a differentiable map from an input batch to logits.
// Parameters are bound internally without gradients; only the input leaf
// carries them during crafting.
class AttackTarget {
  public:
    virtual ~AttackTarget() = default;
    virtual Var forward(Graph& g, Var x) const = 0;

    Tensor logits(const Tensor& x) const;
    std::vector<int> predict(const Tensor& x) const;
    double accuracy(const Tensor& x, const std::vector<int>& labels) const;
};

// The backbone as an attack target; the calibration layers stay inside the
// attacked function, rebuilding their graphs from the live (adversarial)
// features each forward.
class ModelTarget final : public AttackTarget {
  public:
    explicit ModelTarget(const Model& m) : model_(&m) {}
    Var forward(Graph& g, Var x) const override;

  private:
    const Model* model_;
};

enum class AttackLoss { CrossEntropy, CwMargin };

struct AttackConfig {
    double epsilon = 8.0 / 255.0;  // L-inf radius in normalized pixel units
    double step_size = (8.0 / 255.0) / 4.0;
    int steps = 10;
    bool random_init = true;
    AttackLoss loss = AttackLoss::CrossEntropy;
    double clamp_lo = 0.0;
    double clamp_hi = 1.0;
    std::uint64_t seed = 0;

    static AttackConfig pgd(int steps, double epsilon = 8.0 / 255.0) {
        AttackConfig cfg;
        cfg.epsilon = epsilon;
        cfg.step_size = epsilon / 4.0;
        cfg.steps = steps;
        return cfg;
    }

    static AttackConfig cw(int steps = 20, double epsilon = 8.0 / 255.0) {
        AttackConfig cfg = pgd(steps, epsilon);
        cfg.loss = AttackLoss::CwMargin;
        return cfg;
    }

    void validate() const;
};

struct AdversarialBatch {
    Tensor clean;
    Tensor adv;
    std::vector<int> labels;
    std::vector<std::uint8_t> success;  // per sample: target mispredicted

    double attacked_accuracy() const;
};

// Elementwise clip of x_adv into [x - eps, x + eps] intersected with the
// clamp range.
void project_linf(Tensor& x_adv, const Tensor& x, double epsilon, double lo, double hi);

// Gradient of the configured loss w.r.t. the input batch.
Tensor input_gradient(const AttackTarget& target, const Tensor& x, const std::vector<int>& y,
                      AttackLoss loss);

// Single signed-gradient step of magnitude epsilon on mean cross-entropy.
Tensor fgsm(const AttackTarget& target, const Tensor& x, const std::vector<int>& y,
            double epsilon, double clamp_lo = 0.0, double clamp_hi = 1.0);
Tensor fgsm(const Model& m, const Tensor& x, const std::vector<int>& y, double epsilon,
            double clamp_lo = 0.0, double clamp_hi = 1.0);

// Iterated signed-gradient ascent, projected every step; returns the final
// iterate. Random init draws per-sample streams from (seed, sample), so the
// result does not depend on scheduling.
AdversarialBatch pgd_attack(const AttackTarget& target, const Tensor& x,
                            const std::vector<int>& y, const AttackConfig& cfg);
AdversarialBatch pgd_attack(const Model& m, const Tensor& x, const std::vector<int>& y,
                            const AttackConfig& cfg);

// PGD on the margin loss mean_i(max_{k != y} z_k - z_y). The kappa floor of
// the usual formulation is dropped: clamped at zero confidence it would zero
// the gradient on every correctly classified sample.
AdversarialBatch cw_margin_attack(const AttackTarget& target, const Tensor& x,
                                  const std::vector<int>& y, const AttackConfig& cfg);
AdversarialBatch cw_margin_attack(const Model& m, const Tensor& x, const std::vector<int>& y,
                                  const AttackConfig& cfg);

// Accuracy of `target` on adversarial inputs crafted against `source` only.
double transfer_attack(const Model& source, const Model& target, const Tensor& x,
                       const std::vector<int>& y, const AttackConfig& cfg);

// Raw float32 little-endian blob + JSON sidecar {shape, epsilon, attack,
// seed, labels}, for replaying transfer attacks across runs.
void save_adversarial_batch(const AdversarialBatch& batch, const AttackConfig& cfg,
                            const std::string& attack_name, const std::string& base_path);
AdversarialBatch load_adversarial_batch(const std::string& base_path);

}  // namespace fmrgc
