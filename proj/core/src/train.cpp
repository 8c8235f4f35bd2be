#include "fmrgc/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>

#include "fmrgc/config.hpp"
#include "fmrgc/errors.hpp"
#include "fmrgc/ops.hpp"
#include "fmrgc/rng.hpp"

namespace fmrgc {

std::string objective_name(Objective o) {
    switch (o) {
        case Objective::Standard: return "standard";
        case Objective::PgdAt: return "pgd_at";
        case Objective::Trades: return "trades";
        case Objective::Awp: return "awp";
    }
    return "?";
}

void TrainConfig::validate() const {
    if (epochs < 1) throw BadConfigError("train: epochs must be >= 1");
    if (batch_size < 1) throw BadConfigError("train: batch_size must be >= 1");
    if (trades_beta < 0.0) throw BadConfigError("train: trades_beta must be >= 0");
    if (awp_gamma_scale < 0.0) throw BadConfigError("train: awp_gamma_scale must be >= 0");
    for (int ms : lr_milestones)
        if (ms >= epochs) throw BadConfigError("train: lr milestone past final epoch");
}

double lr_at_epoch(const TrainConfig& cfg, int epoch) {
    // Dividing by the snapped reciprocal keeps decimal schedules exact:
    // 0.1/10 == 0.01 bitwise, while 0.1*0.1 lands one ulp off.
    const double reciprocal = 1.0 / cfg.lr_decay;
    const double rounded = std::round(reciprocal);
    const bool integral = std::abs(reciprocal - rounded) < 1e-9 && rounded != 0.0;
    double lr = cfg.lr;
    for (int ms : cfg.lr_milestones) {
        if (epoch < ms) continue;
        if (integral) lr /= rounded;
        else lr *= cfg.lr_decay;
    }
    return lr;
}

Sgd::Sgd(const Model& m) {
    velocity_.reserve(m.parameters().size());
    for (const Parameter& p : m.parameters()) velocity_.emplace_back(p.value.shape());
}

void Sgd::step(Model& m, const std::vector<Tensor>& grads, double lr, double momentum, double wd) {
    std::vector<Parameter>& params = m.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (!params[i].trainable) continue;
        Tensor& theta = params[i].value;
        Tensor& v = velocity_[i];
        const Tensor& g = grads[i];
        for (std::size_t t = 0; t < theta.size(); ++t) {
            const double grad = g[t] + wd * theta[t];
            v[t] = momentum * v[t] + grad;
            theta[t] -= lr * v[t];
        }
    }
}

namespace {

std::vector<Tensor> collect_gradients(const Model& m, const Model::Binding& binding) {
    std::vector<Tensor> grads;
    grads.reserve(binding.vars.size());
    for (std::size_t i = 0; i < binding.vars.size(); ++i) {
        if (binding.vars[i].requires_grad()) grads.push_back(binding.vars[i].grad());
        else grads.push_back(Tensor(m.parameters()[i].value.shape()));
    }
    return grads;
}

// Parameter gradients of mean CE on (x, y) at the current weights.
std::vector<Tensor> param_gradients(const Model& m, const Tensor& x, const std::vector<int>& y,
                                    double* loss_out = nullptr) {
    Graph g;
    Model::Binding b = m.bind(g, true);
    Var logits = m.forward(g, b, g.constant(x));
    Var loss = g.softmax_cross_entropy(logits, y);
    g.backward(loss);
    if (loss_out) *loss_out = loss.value().item();
    return collect_gradients(m, b);
}

AttackConfig with_seed(const AttackConfig& base, std::uint64_t step_seed) {
    AttackConfig cfg = base;
    cfg.seed = step_seed;
    return cfg;
}

double standard_step(Model& m, Sgd& opt, const Tensor& xb, const std::vector<int>& yb,
                     const TrainConfig& cfg, double lr) {
    Graph g;
    Model::Binding b = m.bind(g, true);
    Var logits = m.forward(g, b, g.constant(xb));
    Var loss = g.softmax_cross_entropy(logits, yb);
    g.backward(loss);
    std::vector<Tensor> grads = collect_gradients(m, b);
    opt.step(m, grads, lr, cfg.momentum, cfg.weight_decay);
    return loss.value().item();
}

double pgd_at_step(Model& m, Sgd& opt, const Tensor& xb, const std::vector<int>& yb,
                   const TrainConfig& cfg, double lr, std::uint64_t step_seed) {
    AdversarialBatch adv = pgd_attack(m, xb, yb, with_seed(cfg.inner_attack, step_seed));
    Graph g;
    Model::Binding b = m.bind(g, true);
    Var logits = m.forward(g, b, g.constant(adv.adv));
    Var loss = g.softmax_cross_entropy(logits, yb);
    g.backward(loss);
    std::vector<Tensor> grads = collect_gradients(m, b);
    opt.step(m, grads, lr, cfg.momentum, cfg.weight_decay);
    return loss.value().item();
}

double trades_step(Model& m, Sgd& opt, const Tensor& xb, const std::vector<int>& yb,
                   const TrainConfig& cfg, double lr, std::uint64_t step_seed) {
    Graph g;
    Model::Binding b = m.bind(g, true);
    Var loss = trades_loss(g, m, b, xb, yb, cfg.trades_beta, with_seed(cfg.inner_attack, step_seed));
    g.backward(loss);
    std::vector<Tensor> grads = collect_gradients(m, b);
    opt.step(m, grads, lr, cfg.momentum, cfg.weight_decay);
    return loss.value().item();
}

}  // namespace

Var trades_loss(Graph& g, const Model& m, const Model::Binding& binding, const Tensor& x,
                const std::vector<int>& y, double beta, const AttackConfig& inner) {
    // Inner maximization: PGD ascent on KL(clean || perturbed). The clean
    // distribution is a constant of the crafting problem.
    const Tensor clean_logits = m.logits(x);
    Tensor x_adv = x;
    if (inner.random_init) {
        const int n = x.dim(0);
        const std::size_t per_sample = x.size() / static_cast<std::size_t>(n);
        for (int s = 0; s < n; ++s) {
            Rng rng(Rng::mix(inner.seed, static_cast<std::uint64_t>(s)));
            double* dst = x_adv.data() + static_cast<std::size_t>(s) * per_sample;
            for (std::size_t i = 0; i < per_sample; ++i)
                dst[i] += rng.uniform(-inner.epsilon, inner.epsilon);
        }
        project_linf(x_adv, x, inner.epsilon, inner.clamp_lo, inner.clamp_hi);
    }
    for (int step = 0; step < inner.steps; ++step) {
        Graph cg;
        Model::Binding cb = m.bind(cg, false);
        Var xin = cg.leaf(x_adv, true);
        Var q_logits = m.forward(cg, cb, xin);
        Var kl = cg.kl_div_softmax(cg.constant(clean_logits), q_logits);
        cg.backward(kl);
        x_adv = ops::axpy(x_adv, inner.step_size, ops::sign(xin.grad()));
        project_linf(x_adv, x, inner.epsilon, inner.clamp_lo, inner.clamp_hi);
    }

    Var logits_clean = m.forward(g, binding, g.constant(x));
    Var logits_adv = m.forward(g, binding, g.constant(x_adv));
    Var ce = g.softmax_cross_entropy(logits_clean, y);
    Var kl = g.kl_div_softmax(logits_clean, logits_adv);
    return g.add(ce, g.scale(kl, beta));
}

double awp_perturb_and_step(Model& m, Sgd& opt, const Tensor& xb, const std::vector<int>& yb,
                            double gamma_scale, const AttackConfig& inner, double lr,
                            double momentum, double wd) {
    AdversarialBatch adv = pgd_attack(m, xb, yb, inner);

    // One ascent step in weight space, scaled per layer relative to its norm.
    std::vector<Tensor> ascent = param_gradients(m, adv.adv, yb);
    std::vector<Parameter>& params = m.parameters();
    std::vector<Tensor> gamma(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
        gamma[i] = Tensor(params[i].value.shape());
        if (!params[i].trainable || gamma_scale == 0.0) continue;
        const double pn = ops::l2_norm(params[i].value);
        const double gn = ops::l2_norm(ascent[i]);
        if (pn == 0.0 || gn == 0.0) continue;
        const double factor = gamma_scale * pn / gn;
        for (std::size_t t = 0; t < gamma[i].size(); ++t) {
            gamma[i][t] = factor * ascent[i][t];
            params[i].value[t] += gamma[i][t];
        }
    }

    // Descent gradient at theta + gamma, applied to the clean weights.
    double loss = 0.0;
    std::vector<Tensor> descent = param_gradients(m, adv.adv, yb, &loss);
    for (std::size_t i = 0; i < params.size(); ++i)
        for (std::size_t t = 0; t < gamma[i].size(); ++t) params[i].value[t] -= gamma[i][t];

    opt.step(m, descent, lr, momentum, wd);
    return loss;
}

double train_step(Model& m, Sgd& opt, const Tensor& xb, const std::vector<int>& yb,
                  const TrainConfig& cfg, double lr, std::uint64_t step_seed) {
    switch (cfg.objective) {
        case Objective::Standard: return standard_step(m, opt, xb, yb, cfg, lr);
        case Objective::PgdAt: return pgd_at_step(m, opt, xb, yb, cfg, lr, step_seed);
        case Objective::Trades: return trades_step(m, opt, xb, yb, cfg, lr, step_seed);
        case Objective::Awp:
            return awp_perturb_and_step(m, opt, xb, yb, cfg.awp_gamma_scale,
                                        with_seed(cfg.inner_attack, step_seed), lr, cfg.momentum,
                                        cfg.weight_decay);
    }
    return 0.0;
}

TrainResult train_model(Model& m, const Dataset& train, const TrainConfig& cfg) {
    cfg.validate();
    Sgd opt(m);
    TrainResult result;
    Rng shuffle_rng(Rng::mix(cfg.seed, 0x0dafULL));
    std::vector<int> order(static_cast<std::size_t>(train.size()));
    std::iota(order.begin(), order.end(), 0);

    std::uint64_t global_step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = lr_at_epoch(cfg, epoch);
        std::vector<Tensor> snapshot;
        snapshot.reserve(m.parameters().size());
        for (const Parameter& p : m.parameters()) snapshot.push_back(p.value);

        shuffle_rng.shuffle(order);
        double loss_sum = 0.0;
        int batches = 0;
        try {
            for (int start = 0; start < train.size(); start += cfg.batch_size) {
                const int count = std::min(cfg.batch_size, train.size() - start);
                auto [xb, yb] = train.gather(order, start, count);
                loss_sum += train_step(m, opt, xb, yb, cfg, lr,
                                       Rng::mix(cfg.seed ^ 0xa77ac4ULL, global_step));
                ++global_step;
                ++batches;
            }
        } catch (const NonFiniteError&) {
            for (std::size_t i = 0; i < snapshot.size(); ++i)
                m.parameters()[i].value = snapshot[i];
            result.aborted_non_finite = true;
            break;
        }
        result.log.push_back({epoch, lr, loss_sum / std::max(batches, 1)});
        result.completed_epochs = epoch + 1;
    }
    return result;
}

void save_checkpoint(const std::string& path, const Model& m, const CheckpointMeta& meta) {
    nlohmann::json manifest;
    manifest["version"] = 1;
    manifest["backbone"] = to_json(meta.backbone);
    manifest["train"] = to_json(meta.train);
    manifest["epoch"] = meta.epoch;
    manifest["rng_state"] = meta.rng_state;
    manifest["val_clean_acc"] = meta.val_clean_acc;
    manifest["config_hash"] = meta.config_hash;
    manifest["param_hash"] = m.param_hash();
    nlohmann::json params = nlohmann::json::array();
    for (const Parameter& p : m.parameters()) {
        nlohmann::json entry;
        entry["name"] = p.name;
        entry["shape"] = p.value.shape();
        entry["trainable"] = p.trainable;
        params.push_back(std::move(entry));
    }
    manifest["params"] = std::move(params);
    const std::string mstr = manifest.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path);
    out.write("FMRGC1\0", 7);
    const std::uint64_t len = mstr.size();
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(mstr.data(), static_cast<std::streamsize>(mstr.size()));
    for (const Parameter& p : m.parameters())
        out.write(reinterpret_cast<const char*>(p.value.data()),
                  static_cast<std::streamsize>(p.value.size() * sizeof(double)));
    if (!out) throw IoError("short write to " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    char magic[7] = {};
    in.read(magic, 7);
    if (!in || std::memcmp(magic, "FMRGC1\0", 7) != 0)
        throw IoError(path + ": not a checkpoint (bad magic)");
    std::uint64_t len = 0;
    in.read(reinterpret_cast<char*>(&len), sizeof(len));
    std::string mstr(len, '\0');
    in.read(mstr.data(), static_cast<std::streamsize>(len));
    if (!in) throw TruncatedFileError(path + ": manifest truncated");
    const nlohmann::json manifest = nlohmann::json::parse(mstr);

    CheckpointMeta meta;
    meta.backbone = backbone_from_json(manifest.at("backbone"));
    meta.train = train_from_json(manifest.at("train"));
    meta.epoch = manifest.at("epoch").get<int>();
    meta.rng_state = manifest.at("rng_state").get<std::string>();
    meta.val_clean_acc = manifest.at("val_clean_acc").get<double>();
    meta.config_hash = manifest.at("config_hash").get<std::uint64_t>();

    Model model(meta.backbone, /*seed=*/0);
    const nlohmann::json& params = manifest.at("params");
    if (params.size() != model.parameters().size())
        throw IoError(path + ": parameter list mismatch");
    for (std::size_t i = 0; i < model.parameters().size(); ++i) {
        Parameter& p = model.parameters()[i];
        if (params[i].at("name").get<std::string>() != p.name)
            throw IoError(path + ": parameter order mismatch at " + p.name);
        const std::vector<int> shape = params[i].at("shape").get<std::vector<int>>();
        if (shape != p.value.shape()) throw IoError(path + ": shape mismatch at " + p.name);
        in.read(reinterpret_cast<char*>(p.value.data()),
                static_cast<std::streamsize>(p.value.size() * sizeof(double)));
        if (!in) throw TruncatedFileError(path + ": blob truncated at " + p.name);
    }
    const std::uint64_t expect = manifest.at("param_hash").get<std::uint64_t>();
    if (model.param_hash() != expect) throw IoError(path + ": parameter hash mismatch");
    return LoadedCheckpoint{std::move(model), std::move(meta)};
}

}  // namespace fmrgc
