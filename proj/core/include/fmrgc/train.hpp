#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fmrgc/attacks.hpp"
#include "fmrgc/data.hpp"
#include "fmrgc/model.hpp"

namespace fmrgc {

enum class Objective { Standard, PgdAt, Trades, Awp };

std::string objective_name(Objective o);

struct TrainConfig {
    int epochs = 100;
    double lr = 0.1;
    std::vector<int> lr_milestones{90, 95};
    double lr_decay = 0.1;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    int batch_size = 128;
    Objective objective = Objective::Standard;
    double trades_beta = 6.0;
    double awp_gamma_scale = 5e-3;
    AttackConfig inner_attack;  // PGD-10 defaults
    std::uint64_t seed = 0;

    void validate() const;
};

double lr_at_epoch(const TrainConfig& cfg, int epoch);

// SGD with momentum and decoupled-from-nothing classic weight decay
// (gradient += wd * theta). One velocity buffer per parameter.
class Sgd {
  public:
    explicit Sgd(const Model& m);
    void step(Model& m, const std::vector<Tensor>& grads, double lr, double momentum, double wd);

  private:
    std::vector<Tensor> velocity_;
};

struct EpochLog {
    int epoch = 0;
    double lr = 0.0;
    double mean_loss = 0.0;
};

struct TrainResult {
    std::vector<EpochLog> log;
    bool aborted_non_finite = false;
    int completed_epochs = 0;
};

// Runs the configured objective over the training set. On a non-finite
// loss the parameters are rolled back to the last epoch boundary and
// training stops there.
TrainResult train_model(Model& m, const Dataset& train, const TrainConfig& cfg);

// One optimizer step on a single batch (exposed for step-level tests);
// returns the batch loss.
double train_step(Model& m, Sgd& opt, const Tensor& xb, const std::vector<int>& yb,
                  const TrainConfig& cfg, double lr, std::uint64_t step_seed);

// CE(model(x), y) + beta * KL(softmax(model(x)) || softmax(model(x + delta)))
// with delta crafted by PGD ascent on the KL term. Differentiable through
// both branches via `binding`.
Var trades_loss(Graph& g, const Model& m, const Model::Binding& binding, const Tensor& x,
                const std::vector<int>& y, double beta, const AttackConfig& inner);

// Adversarial weight perturbation step: craft x_adv, ascend each trainable
// parameter by gamma_scale * |theta| along its normalized gradient, take the
// descent gradient at theta + gamma, remove gamma, then apply the step.
// Returns the loss observed at theta + gamma.
double awp_perturb_and_step(Model& m, Sgd& opt, const Tensor& xb, const std::vector<int>& yb,
                            double gamma_scale, const AttackConfig& inner, double lr,
                            double momentum, double wd);

// ---- checkpoint -------------------------------------------------------------
//
// "FMRGC1\0" magic, little-endian u64 manifest length, JSON manifest,
// then float64 little-endian parameter blobs in manifest order.

struct CheckpointMeta {
    BackboneConfig backbone;
    TrainConfig train;
    int epoch = 0;
    std::string rng_state;
    double val_clean_acc = 0.0;
    std::uint64_t config_hash = 0;
};

void save_checkpoint(const std::string& path, const Model& m, const CheckpointMeta& meta);

struct LoadedCheckpoint {
    Model model;
    CheckpointMeta meta;
};
LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace fmrgc
