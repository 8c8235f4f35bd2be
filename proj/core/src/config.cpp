#include "fmrgc/config.hpp"

#include <array>

#include "fmrgc/errors.hpp"

namespace fmrgc {

using nlohmann::json;

namespace {

std::string pooling_name(const PoolingMode& m) {
    switch (m.kind) {
        case PoolingMode::Kind::GlobalAvg: return "global_avg";
        case PoolingMode::Kind::None: return "none";
        case PoolingMode::Kind::BlockAvg: return "block_avg";
    }
    return "global_avg";
}

PoolingMode pooling_from(const std::string& name, int kernel) {
    if (name == "global_avg") return PoolingMode::global_avg();
    if (name == "none") return PoolingMode::none();
    if (name == "block_avg") return PoolingMode::block_avg(kernel);
    throw BadConfigError("unknown pooling_mode: " + name);
}

std::string loss_name(AttackLoss l) {
    return l == AttackLoss::CrossEntropy ? "cross_entropy" : "cw_margin";
}

AttackLoss loss_from(const std::string& name) {
    if (name == "cross_entropy") return AttackLoss::CrossEntropy;
    if (name == "cw_margin") return AttackLoss::CwMargin;
    throw BadConfigError("unknown loss_kind: " + name);
}

}  // namespace

json to_json(const AttackConfig& cfg) {
    json j;
    j["epsilon"] = cfg.epsilon;
    j["step_size"] = cfg.step_size;
    j["steps"] = cfg.steps;
    j["random_init"] = cfg.random_init;
    j["loss_kind"] = loss_name(cfg.loss);
    j["clamp_range"] = std::array<double, 2>{cfg.clamp_lo, cfg.clamp_hi};
    j["seed"] = cfg.seed;
    return j;
}

AttackConfig attack_from_json(const json& j, AttackConfig base) {
    AttackConfig cfg = base;
    cfg.epsilon = j.value("epsilon", cfg.epsilon);
    cfg.step_size = j.value("step_size", j.contains("epsilon") ? cfg.epsilon / 4.0 : cfg.step_size);
    cfg.steps = j.value("steps", cfg.steps);
    cfg.random_init = j.value("random_init", cfg.random_init);
    if (j.contains("loss_kind")) cfg.loss = loss_from(j.at("loss_kind").get<std::string>());
    if (j.contains("clamp_range")) {
        const auto range = j.at("clamp_range").get<std::array<double, 2>>();
        cfg.clamp_lo = range[0];
        cfg.clamp_hi = range[1];
    }
    cfg.seed = j.value("seed", cfg.seed);
    return cfg;
}

json to_json(const FmrGcConfig& cfg) {
    json j;
    j["k"] = cfg.k;
    j["pooling_mode"] = pooling_name(cfg.pooling);
    j["pooling_kernel"] = cfg.pooling.block;
    j["sigma_rule"] = cfg.sigma.kind == SigmaRule::Kind::Median ? "median" : "fixed";
    j["sigma_sq"] = cfg.sigma.fixed_value;
    j["train_theta"] = cfg.train_theta;
    j["identity_theta"] = cfg.identity_theta;
    return j;
}

FmrGcConfig fmrgc_from_json(const json& j, FmrGcConfig base) {
    FmrGcConfig cfg = base;
    cfg.k = j.value("k", cfg.k);
    if (j.contains("pooling_mode"))
        cfg.pooling = pooling_from(j.at("pooling_mode").get<std::string>(),
                                   j.value("pooling_kernel", cfg.pooling.block));
    if (j.contains("sigma_rule")) {
        const std::string rule = j.at("sigma_rule").get<std::string>();
        if (rule == "median") cfg.sigma = SigmaRule::median();
        else if (rule == "fixed") cfg.sigma = SigmaRule::fixed(j.value("sigma_sq", 1.0));
        else throw BadConfigError("unknown sigma_rule: " + rule);
    }
    cfg.train_theta = j.value("train_theta", cfg.train_theta);
    cfg.identity_theta = j.value("identity_theta", cfg.identity_theta);
    return cfg;
}

json to_json(const BackboneConfig& cfg) {
    json j;
    j["input_shape"] = cfg.input_shape;
    j["widths"] = cfg.widths;
    j["num_classes"] = cfg.num_classes;
    const char* names[3] = {"conv1", "conv2", "conv3"};
    for (int s = 0; s < 3; ++s) {
        json slot = to_json(cfg.slots[static_cast<std::size_t>(s)].fmr);
        slot["enabled"] = cfg.slots[static_cast<std::size_t>(s)].enabled;
        j[names[s]] = std::move(slot);
    }
    return j;
}

BackboneConfig backbone_from_json(const json& j, BackboneConfig base) {
    BackboneConfig cfg = base;
    if (j.contains("input_shape")) cfg.input_shape = j.at("input_shape").get<std::array<int, 3>>();
    if (j.contains("widths")) cfg.widths = j.at("widths").get<std::array<int, 3>>();
    cfg.num_classes = j.value("num_classes", cfg.num_classes);
    const char* names[3] = {"conv1", "conv2", "conv3"};
    for (int s = 0; s < 3; ++s) {
        if (!j.contains(names[s])) continue;
        const json& slot = j.at(names[s]);
        cfg.slots[static_cast<std::size_t>(s)].enabled =
            slot.value("enabled", cfg.slots[static_cast<std::size_t>(s)].enabled);
        cfg.slots[static_cast<std::size_t>(s)].fmr =
            fmrgc_from_json(slot, cfg.slots[static_cast<std::size_t>(s)].fmr);
    }
    return cfg;
}

json to_json(const TrainConfig& cfg) {
    json j;
    j["epochs"] = cfg.epochs;
    j["lr"] = cfg.lr;
    j["lr_milestones"] = cfg.lr_milestones;
    j["lr_decay"] = cfg.lr_decay;
    j["momentum"] = cfg.momentum;
    j["weight_decay"] = cfg.weight_decay;
    j["batch_size"] = cfg.batch_size;
    switch (cfg.objective) {
        case Objective::Standard: j["objective"] = "standard"; break;
        case Objective::PgdAt: j["objective"] = "pgd_at"; break;
        case Objective::Trades: j["objective"] = "trades"; break;
        case Objective::Awp: j["objective"] = "awp"; break;
    }
    j["trades_beta"] = cfg.trades_beta;
    j["awp_gamma_scale"] = cfg.awp_gamma_scale;
    j["inner_attack"] = to_json(cfg.inner_attack);
    j["seed"] = cfg.seed;
    return j;
}

TrainConfig train_from_json(const json& j, TrainConfig base) {
    TrainConfig cfg = base;
    cfg.epochs = j.value("epochs", cfg.epochs);
    cfg.lr = j.value("lr", cfg.lr);
    if (j.contains("lr_milestones")) cfg.lr_milestones = j.at("lr_milestones").get<std::vector<int>>();
    cfg.lr_decay = j.value("lr_decay", cfg.lr_decay);
    cfg.momentum = j.value("momentum", cfg.momentum);
    cfg.weight_decay = j.value("weight_decay", cfg.weight_decay);
    cfg.batch_size = j.value("batch_size", cfg.batch_size);
    if (j.contains("objective")) {
        const std::string o = j.at("objective").get<std::string>();
        if (o == "standard") cfg.objective = Objective::Standard;
        else if (o == "pgd_at") cfg.objective = Objective::PgdAt;
        else if (o == "trades") cfg.objective = Objective::Trades;
        else if (o == "awp") cfg.objective = Objective::Awp;
        else throw BadConfigError("unknown objective: " + o);
    }
    cfg.trades_beta = j.value("trades_beta", cfg.trades_beta);
    cfg.awp_gamma_scale = j.value("awp_gamma_scale", cfg.awp_gamma_scale);
    if (j.contains("inner_attack")) cfg.inner_attack = attack_from_json(j.at("inner_attack"), cfg.inner_attack);
    cfg.seed = j.value("seed", cfg.seed);
    return cfg;
}

json to_json(const DatasetSpec& spec) {
    json j;
    j["source"] = spec.source == DatasetSpec::Source::Cifar10Binary ? "cifar10" : "synthetic";
    j["path"] = spec.path;
    j["train_size"] = spec.train_size;
    j["test_size"] = spec.test_size;
    j["seed"] = spec.seed;
    json s;
    s["classes"] = spec.synthetic.classes;
    s["per_class"] = spec.synthetic.per_class;
    s["image_size"] = spec.synthetic.image_size;
    s["seed"] = spec.synthetic.seed;
    s["noise"] = spec.synthetic.noise;
    j["synthetic"] = std::move(s);
    return j;
}

DatasetSpec dataset_from_json(const json& j, DatasetSpec base) {
    DatasetSpec spec = base;
    if (j.contains("source")) {
        const std::string s = j.at("source").get<std::string>();
        if (s == "cifar10") spec.source = DatasetSpec::Source::Cifar10Binary;
        else if (s == "synthetic") spec.source = DatasetSpec::Source::Synthetic;
        else throw BadConfigError("unknown dataset source: " + s);
    }
    spec.path = j.value("path", spec.path);
    spec.train_size = j.value("train_size", spec.train_size);
    spec.test_size = j.value("test_size", spec.test_size);
    spec.seed = j.value("seed", spec.seed);
    if (j.contains("synthetic")) {
        const json& s = j.at("synthetic");
        spec.synthetic.classes = s.value("classes", spec.synthetic.classes);
        spec.synthetic.per_class = s.value("per_class", spec.synthetic.per_class);
        spec.synthetic.image_size = s.value("image_size", spec.synthetic.image_size);
        spec.synthetic.seed = s.value("seed", spec.synthetic.seed);
        spec.synthetic.noise = s.value("noise", spec.synthetic.noise);
    }
    return spec;
}

std::uint64_t config_hash(const json& j) {
    const std::string dump = j.dump();
    return fnv1a64(dump.data(), dump.size());
}

std::string hash_hex(std::uint64_t h) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = digits[h & 0xF];
        h >>= 4;
    }
    return out;
}

}  // namespace fmrgc
