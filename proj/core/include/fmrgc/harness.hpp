#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fmrgc/attacks.hpp"
#include "fmrgc/data.hpp"
#include "fmrgc/model.hpp"
#include "fmrgc/train.hpp"

namespace fmrgc {

// The attack battery behind a robustness report: Clean, FGSM, PGD-10/20/50
// and the margin attack, all at one epsilon.
struct AttackSuite {
    double epsilon = 8.0 / 255.0;
    std::vector<int> pgd_steps{10, 20, 50};
    int cw_steps = 20;
    bool random_init = true;
    int eval_batch = 250;
};

struct ReportRow {
    std::string name;
    double accuracy_pct = 0.0;
};

struct RobustnessReport {
    std::vector<ReportRow> rows;
    std::uint64_t model_hash = 0;
    double epsilon = 0.0;
    std::uint64_t seed = 0;
    double wall_seconds = 0.0;  // manifest metadata only, never in the CSV

    double row(const std::string& name) const;
};

RobustnessReport evaluate_robustness(const Model& m, const Dataset& test, const AttackSuite& suite,
                                     std::uint64_t seed);

// Accuracy helpers used by the sweep drivers (clean / single attack).
double clean_accuracy(const Model& m, const Dataset& test, int eval_batch = 250);
double attacked_accuracy(const Model& m, const Dataset& test, const AttackConfig& cfg,
                         std::uint64_t seed, int eval_batch = 250);
double fgsm_accuracy(const Model& m, const Dataset& test, double epsilon, int eval_batch = 250);

// Deterministic CSV writers; doubles are printed with fixed precision so a
// rerun with the same seed is byte-identical.
void write_report_csv(const RobustnessReport& report, const std::string& path);
void write_report_manifest(const RobustnessReport& report, std::uint64_t config_hash,
                           const std::string& path);

// ---- cost accounting ---------------------------------------------------------

struct CostRow {
    std::string name;
    long long params = 0;
    long long macs = 0;  // scalar multiplies per single-sample forward
};

struct CostReport {
    std::vector<CostRow> rows;
    long long total_params = 0;
    long long total_macs = 0;
};

// Analytic per-layer parameter and multiply counts. Convolutions count
// cout*cin*kh*kw*ho*wo; the calibration layer counts similarity (C^2 m),
// propagation (C^2 d) and the weight product (C d^2); graph normalization
// and additions are excluded from the MAC model.
CostReport cost_report(const Model& m);

void write_cost_csv(const CostReport& report, const std::string& path);

// ---- sweeps ------------------------------------------------------------------

struct SweepPlan {
    BackboneConfig backbone;    // slots toggled per cell by the sweep
    TrainConfig train;          // objective etc. shared across cells
    std::vector<std::uint64_t> seeds{1, 2, 3};
    AttackConfig eval_attack = AttackConfig::pgd(10);
    int eval_batch = 250;
};

struct SweepRow {
    std::string cell;
    std::uint64_t seed = 0;
    double clean_pct = 0.0;
    double fgsm_pct = 0.0;
    double pgd10_pct = 0.0;
    std::uint64_t config_hash = 0;
};

struct SweepResult {
    std::vector<SweepRow> rows;          // one per (cell, seed)
    std::vector<SweepRow> seed_means;    // one per cell, seed field = 0

    const SweepRow& mean(const std::string& cell) const;
};

// Slot subsets {}, {1}, {2}, {3}, {1,2}, {1,2,3} of the block-position study.
SweepResult sweep_block_positions(const SweepPlan& plan, const Dataset& train,
                                  const Dataset& test);

// One trained model per neighbor count k (conv1 slot).
SweepResult sweep_graph_density(const SweepPlan& plan, const Dataset& train, const Dataset& test,
                                const std::vector<int>& k_values);

// One trained model per descriptor pooling mode, plus the slotless baseline.
SweepResult sweep_descriptors(const SweepPlan& plan, const Dataset& train, const Dataset& test);

// baseline / propagation-only (theta2 = I, frozen) / trained theta2.
SweepResult sweep_components(const SweepPlan& plan, const Dataset& train, const Dataset& test);

struct EpsilonRow {
    double epsilon = 0.0;
    double pgd10_pct = 0.0;
    double pgd100_pct = 0.0;
};

// PGD budget sweep on a fixed model.
std::vector<EpsilonRow> sweep_epsilon(const Model& m, const Dataset& test,
                                      const std::vector<double>& eps_list, std::uint64_t seed,
                                      int eval_batch = 250, bool with_pgd100 = true);

void write_sweep_csv(const SweepResult& result, const std::string& path);
void write_epsilon_csv(const std::vector<EpsilonRow>& rows, std::uint64_t config_hash,
                       const std::string& path);

}  // namespace fmrgc
