// Command-line face of the laboratory: training, attacks, robustness
// reports, ablation sweeps and cost accounting, all driven by one JSON
// config plus a handful of flags.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "fmrgc/config.hpp"
#include "fmrgc/harness.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct GlobalArgs {
    std::string config_path;
    std::uint64_t seed = 1;
    std::string out_dir = "runs";
    std::string data_dir;
    bool synthetic = false;
};

struct ResolvedConfig {
    json raw = json::object();
    fmrgc::BackboneConfig backbone;
    fmrgc::TrainConfig train;
    fmrgc::AttackConfig attack = fmrgc::AttackConfig::pgd(10);
    fmrgc::DatasetSpec data;
};

ResolvedConfig resolve(const GlobalArgs& args) {
    ResolvedConfig cfg;
    if (!args.config_path.empty()) {
        std::ifstream in(args.config_path);
        if (!in) throw fmrgc::IoError("cannot open config " + args.config_path);
        cfg.raw = json::parse(in);
    }
    // Desk-scale defaults: small subsets, 20 epochs, milestones scaled to
    // the shortened schedule.
    cfg.train.epochs = 20;
    cfg.train.lr_milestones = {18, 19};
    cfg.train.batch_size = 64;
    cfg.train.objective = fmrgc::Objective::PgdAt;
    cfg.backbone.slots[0].enabled = true;

    if (cfg.raw.contains("backbone")) cfg.backbone = fmrgc::backbone_from_json(cfg.raw["backbone"], cfg.backbone);
    if (cfg.raw.contains("train")) cfg.train = fmrgc::train_from_json(cfg.raw["train"], cfg.train);
    if (cfg.raw.contains("attack")) cfg.attack = fmrgc::attack_from_json(cfg.raw["attack"], cfg.attack);
    if (cfg.raw.contains("data")) cfg.data = fmrgc::dataset_from_json(cfg.raw["data"], cfg.data);

    if (!args.data_dir.empty()) {
        cfg.data.source = fmrgc::DatasetSpec::Source::Cifar10Binary;
        cfg.data.path = args.data_dir;
    }
    if (args.synthetic) cfg.data.source = fmrgc::DatasetSpec::Source::Synthetic;
    if (cfg.data.source == fmrgc::DatasetSpec::Source::Synthetic) {
        // Enough synthetic records to cover the requested subsets.
        const int per_class_needed =
            (std::max(cfg.data.train_size, cfg.data.test_size) + cfg.data.synthetic.classes - 1) /
            cfg.data.synthetic.classes;
        cfg.data.synthetic.per_class = std::max(cfg.data.synthetic.per_class, per_class_needed);
    }
    cfg.data.seed = args.seed;
    cfg.train.seed = args.seed;
    return cfg;
}

json resolved_json(const ResolvedConfig& cfg) {
    json j;
    j["backbone"] = fmrgc::to_json(cfg.backbone);
    j["train"] = fmrgc::to_json(cfg.train);
    j["attack"] = fmrgc::to_json(cfg.attack);
    j["data"] = fmrgc::to_json(cfg.data);
    return j;
}

void write_manifest(const fs::path& path, const json& body) {
    std::ofstream out(path);
    out << body.dump(2) << "\n";
}

fmrgc::SweepPlan make_plan(const ResolvedConfig& cfg, const std::vector<std::uint64_t>& seeds) {
    fmrgc::SweepPlan plan;
    plan.backbone = cfg.backbone;
    plan.train = cfg.train;
    plan.eval_attack = fmrgc::AttackConfig::pgd(10, cfg.attack.epsilon);
    if (!seeds.empty()) plan.seeds = seeds;
    return plan;
}

int run_train(const GlobalArgs& args, const ResolvedConfig& cfg) {
    auto [train_data, test_data] = fmrgc::load_dataset(cfg.data);
    std::cout << "train: " << train_data.size() << " samples, test: " << test_data.size()
              << ", objective " << fmrgc::objective_name(cfg.train.objective) << "\n";

    fmrgc::Model model(cfg.backbone, args.seed);
    fmrgc::TrainResult result = fmrgc::train_model(model, train_data, cfg.train);

    fs::create_directories(args.out_dir);
    {
        std::ofstream log(fs::path(args.out_dir) / "train_log.csv");
        log << "epoch,lr,mean_loss\n";
        char buf[64];
        for (const fmrgc::EpochLog& row : result.log) {
            std::snprintf(buf, sizeof(buf), "%d,%.6f,%.6f", row.epoch, row.lr, row.mean_loss);
            log << buf << "\n";
        }
    }

    fmrgc::CheckpointMeta meta;
    meta.backbone = cfg.backbone;
    meta.train = cfg.train;
    meta.epoch = result.completed_epochs;
    meta.rng_state = "";
    meta.val_clean_acc = fmrgc::clean_accuracy(model, test_data);
    meta.config_hash = fmrgc::config_hash(resolved_json(cfg));
    const fs::path ckpt = fs::path(args.out_dir) / "checkpoint.ckpt";
    fmrgc::save_checkpoint(ckpt.string(), model, meta);

    json manifest = resolved_json(cfg);
    manifest["config_hash"] = fmrgc::hash_hex(meta.config_hash);
    manifest["checkpoint"] = ckpt.string();
    manifest["val_clean_acc"] = meta.val_clean_acc;
    manifest["aborted_non_finite"] = result.aborted_non_finite;
    write_manifest(fs::path(args.out_dir) / "manifest.json", manifest);

    std::cout << "clean accuracy " << meta.val_clean_acc << "%, checkpoint " << ckpt << "\n";
    if (result.aborted_non_finite)
        std::cout << "warning: training aborted on a non-finite loss; checkpoint holds the last"
                     " good epoch\n";
    return 0;
}

int run_eval(const GlobalArgs& args, const ResolvedConfig& cfg, const std::string& ckpt) {
    auto loaded = fmrgc::load_checkpoint(ckpt);
    auto [train_data, test_data] = fmrgc::load_dataset(cfg.data);
    (void)train_data;

    fmrgc::AttackSuite suite;
    suite.epsilon = cfg.attack.epsilon;
    fmrgc::RobustnessReport report =
        fmrgc::evaluate_robustness(loaded.model, test_data, suite, args.seed);

    fs::create_directories(args.out_dir);
    fmrgc::write_report_csv(report, (fs::path(args.out_dir) / "report.csv").string());
    fmrgc::write_report_manifest(report, fmrgc::config_hash(resolved_json(cfg)),
                                 (fs::path(args.out_dir) / "report_manifest.json").string());
    for (const fmrgc::ReportRow& row : report.rows)
        std::cout << row.name << "\t" << row.accuracy_pct << "\n";
    return 0;
}

int run_attack(const GlobalArgs& args, const ResolvedConfig& cfg, const std::string& ckpt,
               const std::string& kind, int count) {
    auto loaded = fmrgc::load_checkpoint(ckpt);
    auto [train_data, test_data] = fmrgc::load_dataset(cfg.data);
    (void)train_data;

    std::vector<int> order(static_cast<std::size_t>(std::min(count, test_data.size())));
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    auto [xb, yb] = test_data.gather(order, 0, static_cast<int>(order.size()));

    fmrgc::AttackConfig attack = cfg.attack;
    attack.seed = args.seed;
    fmrgc::AdversarialBatch batch;
    if (kind == "fgsm") {
        batch.clean = xb;
        batch.adv = fmrgc::fgsm(loaded.model, xb, yb, attack.epsilon);
        batch.labels = yb;
        const std::vector<int> pred = loaded.model.predict(batch.adv);
        batch.success.resize(yb.size());
        for (std::size_t i = 0; i < yb.size(); ++i) batch.success[i] = pred[i] != yb[i];
    } else if (kind == "pgd") {
        batch = fmrgc::pgd_attack(loaded.model, xb, yb, attack);
    } else if (kind == "cw") {
        batch = fmrgc::cw_margin_attack(loaded.model, xb, yb, attack);
    } else {
        std::cerr << "unknown attack kind: " << kind << "\n";
        return 1;
    }

    fs::create_directories(args.out_dir);
    const fs::path base = fs::path(args.out_dir) / ("adv_" + kind);
    fmrgc::save_adversarial_batch(batch, attack, kind, base.string());
    std::cout << kind << " accuracy " << 100.0 * batch.attacked_accuracy() << "% on "
              << order.size() << " samples; batch exported to " << base << ".{bin,json}\n";
    return 0;
}

int run_transfer(const GlobalArgs& args, const ResolvedConfig& cfg, const std::string& source_ckpt,
                 const std::string& target_ckpt) {
    auto source = fmrgc::load_checkpoint(source_ckpt);
    auto target = fmrgc::load_checkpoint(target_ckpt);
    auto [train_data, test_data] = fmrgc::load_dataset(cfg.data);
    (void)train_data;

    std::vector<int> order(static_cast<std::size_t>(test_data.size()));
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    auto [xb, yb] = test_data.gather(order, 0, test_data.size());

    fmrgc::AttackConfig attack = cfg.attack;
    attack.seed = args.seed;
    const double acc = fmrgc::transfer_attack(source.model, target.model, xb, yb, attack);
    std::cout << "transfer accuracy " << 100.0 * acc << "%\n";

    fs::create_directories(args.out_dir);
    json manifest;
    manifest["source"] = source_ckpt;
    manifest["target"] = target_ckpt;
    manifest["accuracy_pct"] = 100.0 * acc;
    manifest["attack"] = fmrgc::to_json(attack);
    write_manifest(fs::path(args.out_dir) / "transfer.json", manifest);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Channel-graph feature-calibration robustness laboratory"};
    app.require_subcommand(1);

    GlobalArgs args;
    app.add_option("--config", args.config_path, "JSON config document");
    app.add_option("--seed", args.seed, "master seed");
    app.add_option("--out", args.out_dir, "output directory");
    app.add_option("--data", args.data_dir, "CIFAR-10 binary directory");
    app.add_flag("--synthetic", args.synthetic, "use the synthetic dataset");

    auto* cmd_train = app.add_subcommand("train", "train a model per the config objective");

    std::string ckpt;
    auto* cmd_eval = app.add_subcommand("eval", "robustness report for a checkpoint");
    cmd_eval->add_option("--ckpt", ckpt, "checkpoint path")->required();

    std::string attack_kind = "pgd";
    int attack_count = 256;
    auto* cmd_attack = app.add_subcommand("attack", "craft and export an adversarial batch");
    cmd_attack->add_option("--ckpt", ckpt, "checkpoint path")->required();
    cmd_attack->add_option("--kind", attack_kind, "fgsm|pgd|cw");
    cmd_attack->add_option("--count", attack_count, "samples to attack");

    std::string source_ckpt, target_ckpt;
    auto* cmd_transfer = app.add_subcommand("transfer", "transfer attack between checkpoints");
    cmd_transfer->add_option("--source-ckpt", source_ckpt)->required();
    cmd_transfer->add_option("--target-ckpt", target_ckpt)->required();

    auto* cmd_cost = app.add_subcommand("cost", "analytic parameter / MAC accounting");

    auto* cmd_sweep = app.add_subcommand("sweep", "ablation sweeps");
    cmd_sweep->require_subcommand(1);
    std::vector<std::uint64_t> sweep_seeds;
    cmd_sweep->add_option("--seeds", sweep_seeds, "seeds for every sweep cell");
    auto* sweep_positions = cmd_sweep->add_subcommand("positions", "block-position study");
    std::vector<int> k_values{1, 5, 15};
    auto* sweep_density = cmd_sweep->add_subcommand("density", "graph sparsity study");
    sweep_density->add_option("--k", k_values, "neighbor counts");
    auto* sweep_descr = cmd_sweep->add_subcommand("descriptors", "node descriptor study");
    auto* sweep_comp = cmd_sweep->add_subcommand("components", "propagation/theta2 ablation");
    std::vector<double> eps_list{2.0 / 255, 4.0 / 255, 8.0 / 255, 12.0 / 255, 16.0 / 255};
    auto* sweep_eps = cmd_sweep->add_subcommand("epsilon", "attack budget sweep on a checkpoint");
    sweep_eps->add_option("--ckpt", ckpt, "checkpoint path")->required();
    sweep_eps->add_option("--eps", eps_list, "ascending epsilon values");

    CLI11_PARSE(app, argc, argv);

    try {
        ResolvedConfig cfg = resolve(args);
        if (cmd_train->parsed()) return run_train(args, cfg);
        if (cmd_eval->parsed()) return run_eval(args, cfg, ckpt);
        if (cmd_attack->parsed()) return run_attack(args, cfg, ckpt, attack_kind, attack_count);
        if (cmd_transfer->parsed()) return run_transfer(args, cfg, source_ckpt, target_ckpt);
        if (cmd_cost->parsed()) {
            fmrgc::Model model(cfg.backbone, args.seed);
            fmrgc::CostReport report = fmrgc::cost_report(model);
            fs::create_directories(args.out_dir);
            fmrgc::write_cost_csv(report, (fs::path(args.out_dir) / "cost.csv").string());
            for (const fmrgc::CostRow& row : report.rows)
                std::cout << row.name << "\tparams " << row.params << "\tmacs " << row.macs << "\n";
            std::cout << "total\tparams " << report.total_params << "\tmacs "
                      << report.total_macs << "\n";
            return 0;
        }
        if (cmd_sweep->parsed()) {
            auto [train_data, test_data] = fmrgc::load_dataset(cfg.data);
            fmrgc::SweepPlan plan = make_plan(cfg, sweep_seeds);
            fs::create_directories(args.out_dir);
            fmrgc::SweepResult result;
            std::string name;
            if (sweep_positions->parsed()) {
                result = fmrgc::sweep_block_positions(plan, train_data, test_data);
                name = "positions";
            } else if (sweep_density->parsed()) {
                result = fmrgc::sweep_graph_density(plan, train_data, test_data, k_values);
                name = "density";
            } else if (sweep_descr->parsed()) {
                result = fmrgc::sweep_descriptors(plan, train_data, test_data);
                name = "descriptors";
            } else if (sweep_comp->parsed()) {
                result = fmrgc::sweep_components(plan, train_data, test_data);
                name = "components";
            } else if (sweep_eps->parsed()) {
                auto loaded = fmrgc::load_checkpoint(ckpt);
                auto rows = fmrgc::sweep_epsilon(loaded.model, test_data, eps_list, args.seed);
                const std::string path = (fs::path(args.out_dir) / "sweep_epsilon.csv").string();
                fmrgc::write_epsilon_csv(rows, fmrgc::config_hash(resolved_json(cfg)), path);
                std::cout << "wrote " << path << "\n";
                return 0;
            }
            const std::string path =
                (fs::path(args.out_dir) / ("sweep_" + name + ".csv")).string();
            fmrgc::write_sweep_csv(result, path);
            std::cout << "wrote " << path << "\n";
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
