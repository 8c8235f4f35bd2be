#include "fmrgc/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>

#include "fmrgc/config.hpp"
#include "fmrgc/errors.hpp"
#include "fmrgc/rng.hpp"

namespace fmrgc {

namespace {

std::string fmt_pct(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4f", v);
    return buf;
}

// Runs `fn(xb, yb, batch_index)` over the test set in fixed-size batches and
// returns the fraction of correct predictions.
template <typename Fn>
double batched_accuracy(const Dataset& test, int eval_batch, Fn&& correct_count) {
    const int n = test.size();
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    int correct = 0;
    int batch_index = 0;
    for (int start = 0; start < n; start += eval_batch, ++batch_index) {
        const int count = std::min(eval_batch, n - start);
        auto [xb, yb] = test.gather(order, start, count);
        correct += correct_count(xb, yb, batch_index);
    }
    return n > 0 ? static_cast<double>(correct) / n : 0.0;
}

int count_correct(const Model& m, const Tensor& x, const std::vector<int>& y) {
    const std::vector<int> pred = m.predict(x);
    int correct = 0;
    for (std::size_t i = 0; i < y.size(); ++i)
        if (pred[i] == y[i]) ++correct;
    return correct;
}

}  // namespace

double RobustnessReport::row(const std::string& name) const {
    for (const ReportRow& r : rows)
        if (r.name == name) return r.accuracy_pct;
    throw BadConfigError("report has no row " + name);
}

double clean_accuracy(const Model& m, const Dataset& test, int eval_batch) {
    return 100.0 * batched_accuracy(test, eval_batch, [&](const Tensor& xb, const std::vector<int>& yb, int) {
        return count_correct(m, xb, yb);
    });
}

double attacked_accuracy(const Model& m, const Dataset& test, const AttackConfig& cfg,
                         std::uint64_t seed, int eval_batch) {
    return 100.0 * batched_accuracy(test, eval_batch, [&](const Tensor& xb, const std::vector<int>& yb, int batch) {
        AttackConfig c = cfg;
        c.seed = Rng::mix(seed, static_cast<std::uint64_t>(batch));
        AdversarialBatch adv = pgd_attack(m, xb, yb, c);
        return count_correct(m, adv.adv, yb);
    });
}

double fgsm_accuracy(const Model& m, const Dataset& test, double epsilon, int eval_batch) {
    return 100.0 * batched_accuracy(test, eval_batch, [&](const Tensor& xb, const std::vector<int>& yb, int) {
        Tensor adv = fgsm(m, xb, yb, epsilon);
        return count_correct(m, adv, yb);
    });
}

RobustnessReport evaluate_robustness(const Model& m, const Dataset& test, const AttackSuite& suite,
                                     std::uint64_t seed) {
    const auto t0 = std::chrono::steady_clock::now();
    RobustnessReport report;
    report.model_hash = m.param_hash();
    report.epsilon = suite.epsilon;
    report.seed = seed;

    report.rows.push_back({"Clean", clean_accuracy(m, test, suite.eval_batch)});
    report.rows.push_back({"FGSM", fgsm_accuracy(m, test, suite.epsilon, suite.eval_batch)});
    std::uint64_t stream = 1;
    for (int steps : suite.pgd_steps) {
        AttackConfig cfg = AttackConfig::pgd(steps, suite.epsilon);
        cfg.random_init = suite.random_init;
        report.rows.push_back({"PGD-" + std::to_string(steps),
                               attacked_accuracy(m, test, cfg, Rng::mix(seed, stream++),
                                                 suite.eval_batch)});
    }
    AttackConfig cw = AttackConfig::cw(suite.cw_steps, suite.epsilon);
    cw.random_init = suite.random_init;
    report.rows.push_back(
        {"CW", attacked_accuracy(m, test, cw, Rng::mix(seed, stream++), suite.eval_batch)});

    report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return report;
}

void write_report_csv(const RobustnessReport& report, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path);
    out << "attack,accuracy_pct\n";
    for (const ReportRow& r : report.rows) out << r.name << "," << fmt_pct(r.accuracy_pct) << "\n";
}

void write_report_manifest(const RobustnessReport& report, std::uint64_t config_hash,
                           const std::string& path) {
    nlohmann::json j;
    j["model_hash"] = hash_hex(report.model_hash);
    j["config_hash"] = hash_hex(config_hash);
    j["epsilon"] = report.epsilon;
    j["seed"] = report.seed;
    j["wall_seconds"] = report.wall_seconds;
    for (const ReportRow& r : report.rows) j["rows"][r.name] = r.accuracy_pct;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path);
    out << j.dump(2) << "\n";
}

CostReport cost_report(const Model& m) {
    const BackboneConfig& cfg = m.config();
    CostReport report;
    int in_channels = cfg.input_shape[0];
    int extent = cfg.input_shape[1];
    for (int s = 0; s < 3; ++s) {
        const int out_channels = cfg.widths[static_cast<std::size_t>(s)];
        extent = ops::conv_out_extent(extent, 3, 2, 1);
        const std::string stage = "conv" + std::to_string(s + 1);
        CostRow conv;
        conv.name = stage;
        conv.params = static_cast<long long>(out_channels) * in_channels * 9 + out_channels;
        conv.macs = static_cast<long long>(out_channels) * in_channels * 9 * extent * extent;
        report.rows.push_back(conv);

        const SlotConfig& slot = cfg.slots[static_cast<std::size_t>(s)];
        if (slot.enabled) {
            const long long c = out_channels;
            const long long d = static_cast<long long>(extent) * extent;
            long long descriptor_dim = 1;
            switch (slot.fmr.pooling.kind) {
                case PoolingMode::Kind::GlobalAvg: descriptor_dim = 1; break;
                case PoolingMode::Kind::None: descriptor_dim = d; break;
                case PoolingMode::Kind::BlockAvg:
                    descriptor_dim = (extent / slot.fmr.pooling.block) *
                                     (extent / slot.fmr.pooling.block);
                    break;
            }
            CostRow fmr;
            fmr.name = stage + ".fmrgc";
            fmr.params = extra_param_count(static_cast<int>(d));
            fmr.macs = c * c * descriptor_dim + c * c * d + c * d * d;
            report.rows.push_back(fmr);
        }
        in_channels = out_channels;
    }
    CostRow head;
    head.name = "head";
    head.params = static_cast<long long>(cfg.widths[2]) * cfg.num_classes + cfg.num_classes;
    head.macs = static_cast<long long>(cfg.widths[2]) * cfg.num_classes;
    report.rows.push_back(head);

    for (const CostRow& r : report.rows) {
        report.total_params += r.params;
        report.total_macs += r.macs;
    }
    return report;
}

void write_cost_csv(const CostReport& report, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path);
    out << "layer,params,macs\n";
    for (const CostRow& r : report.rows)
        out << r.name << "," << r.params << "," << r.macs << "\n";
    out << "total," << report.total_params << "," << report.total_macs << "\n";
}

namespace {

SweepRow run_cell(const std::string& cell, const BackboneConfig& backbone, TrainConfig train_cfg,
                  std::uint64_t seed, const Dataset& train, const Dataset& test,
                  const AttackConfig& eval_attack, int eval_batch) {
    train_cfg.seed = seed;
    nlohmann::json resolved;
    resolved["backbone"] = to_json(backbone);
    resolved["train"] = to_json(train_cfg);

    Model model(backbone, seed);
    train_model(model, train, train_cfg);

    SweepRow row;
    row.cell = cell;
    row.seed = seed;
    row.config_hash = config_hash(resolved);
    row.clean_pct = clean_accuracy(model, test, eval_batch);
    row.fgsm_pct = fgsm_accuracy(model, test, eval_attack.epsilon, eval_batch);
    row.pgd10_pct = attacked_accuracy(model, test, eval_attack, Rng::mix(seed, 0xe7a1ULL), eval_batch);
    return row;
}

SweepResult run_cells(const SweepPlan& plan, const Dataset& train, const Dataset& test,
                      const std::vector<std::pair<std::string, BackboneConfig>>& cells) {
    SweepResult result;
    for (const auto& [name, backbone] : cells) {
        SweepRow mean;
        mean.cell = name;
        for (std::uint64_t seed : plan.seeds) {
            SweepRow row = run_cell(name, backbone, plan.train, seed, train, test,
                                    plan.eval_attack, plan.eval_batch);
            mean.clean_pct += row.clean_pct;
            mean.fgsm_pct += row.fgsm_pct;
            mean.pgd10_pct += row.pgd10_pct;
            mean.config_hash = row.config_hash;  // last seed's resolved config
            result.rows.push_back(std::move(row));
        }
        const double n = static_cast<double>(plan.seeds.size());
        mean.clean_pct /= n;
        mean.fgsm_pct /= n;
        mean.pgd10_pct /= n;
        result.seed_means.push_back(std::move(mean));
    }
    return result;
}

}  // namespace

const SweepRow& SweepResult::mean(const std::string& cell) const {
    for (const SweepRow& r : seed_means)
        if (r.cell == cell) return r;
    throw BadConfigError("sweep has no cell " + cell);
}

SweepResult sweep_block_positions(const SweepPlan& plan, const Dataset& train,
                                  const Dataset& test) {
    static const std::vector<std::vector<int>> subsets{{}, {0}, {1}, {2}, {0, 1}, {0, 1, 2}};
    std::vector<std::pair<std::string, BackboneConfig>> cells;
    for (const std::vector<int>& subset : subsets) {
        BackboneConfig backbone = plan.backbone;
        for (int s = 0; s < 3; ++s) backbone.slots[static_cast<std::size_t>(s)].enabled = false;
        std::string name = "slots";
        if (subset.empty()) name += "_none";
        for (int s : subset) {
            backbone.slots[static_cast<std::size_t>(s)].enabled = true;
            name += "_" + std::to_string(s + 1);
        }
        cells.emplace_back(std::move(name), std::move(backbone));
    }
    return run_cells(plan, train, test, cells);
}

SweepResult sweep_graph_density(const SweepPlan& plan, const Dataset& train, const Dataset& test,
                                const std::vector<int>& k_values) {
    std::vector<std::pair<std::string, BackboneConfig>> cells;
    for (int k : k_values) {
        BackboneConfig backbone = plan.backbone;
        backbone.slots[0].enabled = true;
        backbone.slots[0].fmr.k = k;
        cells.emplace_back("k_" + std::to_string(k), std::move(backbone));
    }
    return run_cells(plan, train, test, cells);
}

SweepResult sweep_descriptors(const SweepPlan& plan, const Dataset& train, const Dataset& test) {
    std::vector<std::pair<std::string, BackboneConfig>> cells;
    {
        BackboneConfig baseline = plan.backbone;
        baseline.slots[0].enabled = false;
        cells.emplace_back("baseline", std::move(baseline));
    }
    const std::vector<std::pair<std::string, PoolingMode>> modes{
        {"global_avg_pool", PoolingMode::global_avg()},
        {"no_pool", PoolingMode::none()},
        {"avg_pool_k4", PoolingMode::block_avg(4)},
        {"avg_pool_k8", PoolingMode::block_avg(8)},
    };
    for (const auto& [name, mode] : modes) {
        BackboneConfig backbone = plan.backbone;
        backbone.slots[0].enabled = true;
        backbone.slots[0].fmr.pooling = mode;
        cells.emplace_back(name, std::move(backbone));
    }
    return run_cells(plan, train, test, cells);
}

SweepResult sweep_components(const SweepPlan& plan, const Dataset& train, const Dataset& test) {
    std::vector<std::pair<std::string, BackboneConfig>> cells;
    {
        BackboneConfig baseline = plan.backbone;
        baseline.slots[0].enabled = false;
        cells.emplace_back("baseline", std::move(baseline));
    }
    {
        BackboneConfig prop_only = plan.backbone;
        prop_only.slots[0].enabled = true;
        prop_only.slots[0].fmr.identity_theta = true;
        prop_only.slots[0].fmr.train_theta = false;
        cells.emplace_back("propagation_only", std::move(prop_only));
    }
    {
        BackboneConfig full = plan.backbone;
        full.slots[0].enabled = true;
        cells.emplace_back("theta2", std::move(full));
    }
    return run_cells(plan, train, test, cells);
}

std::vector<EpsilonRow> sweep_epsilon(const Model& m, const Dataset& test,
                                      const std::vector<double>& eps_list, std::uint64_t seed,
                                      int eval_batch, bool with_pgd100) {
    for (std::size_t i = 1; i < eps_list.size(); ++i)
        if (eps_list[i] < eps_list[i - 1])
            throw BadConfigError("sweep_epsilon: eps_list must be sorted ascending");
    std::vector<EpsilonRow> rows;
    std::uint64_t stream = 0;
    for (double eps : eps_list) {
        EpsilonRow row;
        row.epsilon = eps;
        if (eps == 0.0) {
            row.pgd10_pct = clean_accuracy(m, test, eval_batch);
            row.pgd100_pct = row.pgd10_pct;
        } else {
            row.pgd10_pct = attacked_accuracy(m, test, AttackConfig::pgd(10, eps),
                                              Rng::mix(seed, stream++), eval_batch);
            row.pgd100_pct = with_pgd100
                                 ? attacked_accuracy(m, test, AttackConfig::pgd(100, eps),
                                                     Rng::mix(seed, stream++), eval_batch)
                                 : 0.0;
        }
        rows.push_back(row);
    }
    return rows;
}

void write_sweep_csv(const SweepResult& result, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path);
    out << "cell,seed,clean_pct,fgsm_pct,pgd10_pct,config_hash\n";
    for (const SweepRow& r : result.rows)
        out << r.cell << "," << r.seed << "," << fmt_pct(r.clean_pct) << ","
            << fmt_pct(r.fgsm_pct) << "," << fmt_pct(r.pgd10_pct) << ","
            << hash_hex(r.config_hash) << "\n";
    for (const SweepRow& r : result.seed_means)
        out << r.cell << ",mean," << fmt_pct(r.clean_pct) << "," << fmt_pct(r.fgsm_pct) << ","
            << fmt_pct(r.pgd10_pct) << "," << hash_hex(r.config_hash) << "\n";
}

void write_epsilon_csv(const std::vector<EpsilonRow>& rows, std::uint64_t config_hash,
                       const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path);
    out << "epsilon,pgd10_pct,pgd100_pct,config_hash\n";
    char eps_buf[32];
    for (const EpsilonRow& r : rows) {
        std::snprintf(eps_buf, sizeof(eps_buf), "%.6f", r.epsilon);
        out << eps_buf << "," << fmt_pct(r.pgd10_pct) << "," << fmt_pct(r.pgd100_pct) << ","
            << hash_hex(config_hash) << "\n";
    }
}

}  // namespace fmrgc
