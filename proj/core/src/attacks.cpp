#include "fmrgc/attacks.hpp"

#include <algorithm>
#include <bit>
#include <fstream>

#include <nlohmann/json.hpp>

#include "fmrgc/errors.hpp"
#include "fmrgc/ops.hpp"
#include "fmrgc/rng.hpp"

namespace fmrgc {

static_assert(std::endian::native == std::endian::little,
              "serialized tensor blobs assume a little-endian host");

Tensor AttackTarget::logits(const Tensor& x) const {
    Graph g;
    Var xin = g.leaf(x, false);
    return forward(g, xin).value();
}

std::vector<int> AttackTarget::predict(const Tensor& x) const {
    return ops::argmax_rows(logits(x));
}

double AttackTarget::accuracy(const Tensor& x, const std::vector<int>& labels) const {
    const std::vector<int> pred = predict(x);
    int correct = 0;
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (pred[i] == labels[i]) ++correct;
    return labels.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(labels.size());
}

Var ModelTarget::forward(Graph& g, Var x) const {
    Model::Binding b = model_->bind(g, false);
    return model_->forward(g, b, x);
}

void AttackConfig::validate() const {
    // epsilon = 0 is the degenerate zero-budget attack (an identity map);
    // several callers rely on it reducing cleanly to the unattacked path.
    if (epsilon < 0.0) throw BadConfigError("attack: epsilon must be >= 0");
    if (step_size < 0.0) throw BadConfigError("attack: step_size must be >= 0");
    if (steps < 1) throw BadConfigError("attack: steps must be >= 1");
    if (!(clamp_lo < clamp_hi)) throw BadConfigError("attack: empty clamp range");
}

double AdversarialBatch::attacked_accuracy() const {
    if (success.empty()) return 0.0;
    std::size_t fooled = 0;
    for (std::uint8_t s : success) fooled += s ? 1 : 0;
    return 1.0 - static_cast<double>(fooled) / static_cast<double>(success.size());
}

void project_linf(Tensor& x_adv, const Tensor& x, double epsilon, double lo, double hi) {
    if (!x_adv.same_shape(x)) throw ShapeMismatchError("project_linf: shape mismatch");
    for (std::size_t i = 0; i < x.size(); ++i) {
        double v = x_adv[i];
        v = std::min(std::max(v, x[i] - epsilon), x[i] + epsilon);
        v = std::min(std::max(v, lo), hi);
        x_adv[i] = v;
    }
}

Tensor input_gradient(const AttackTarget& target, const Tensor& x, const std::vector<int>& y,
                      AttackLoss loss) {
    Graph g;
    Var xin = g.leaf(x, true);
    Var logits = target.forward(g, xin);
    Var l = (loss == AttackLoss::CrossEntropy) ? g.softmax_cross_entropy(logits, y)
                                               : g.cw_margin(logits, y);
    g.backward(l);
    return xin.grad();
}

namespace {

std::vector<std::uint8_t> success_flags(const AttackTarget& target, const Tensor& x_adv,
                                        const std::vector<int>& y) {
    const std::vector<int> pred = target.predict(x_adv);
    std::vector<std::uint8_t> out(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) out[i] = pred[i] != y[i] ? 1 : 0;
    return out;
}

}  // namespace

Tensor fgsm(const AttackTarget& target, const Tensor& x, const std::vector<int>& y,
            double epsilon, double clamp_lo, double clamp_hi) {
    Tensor grad = input_gradient(target, x, y, AttackLoss::CrossEntropy);
    Tensor x_adv = ops::axpy(x, epsilon, ops::sign(grad));
    return ops::clamp(x_adv, clamp_lo, clamp_hi);
}

Tensor fgsm(const Model& m, const Tensor& x, const std::vector<int>& y, double epsilon,
            double clamp_lo, double clamp_hi) {
    return fgsm(ModelTarget(m), x, y, epsilon, clamp_lo, clamp_hi);
}

AdversarialBatch pgd_attack(const AttackTarget& target, const Tensor& x,
                            const std::vector<int>& y, const AttackConfig& cfg) {
    cfg.validate();
    AdversarialBatch out;
    out.clean = x;
    out.labels = y;

    Tensor x_adv = x;
    if (cfg.random_init) {
        const int n = x.dim(0);
        const std::size_t per_sample = x.size() / static_cast<std::size_t>(n);
        for (int s = 0; s < n; ++s) {
            Rng rng(Rng::mix(cfg.seed, static_cast<std::uint64_t>(s)));
            double* dst = x_adv.data() + static_cast<std::size_t>(s) * per_sample;
            for (std::size_t i = 0; i < per_sample; ++i)
                dst[i] += rng.uniform(-cfg.epsilon, cfg.epsilon);
        }
        project_linf(x_adv, x, cfg.epsilon, cfg.clamp_lo, cfg.clamp_hi);
    }

    for (int step = 0; step < cfg.steps; ++step) {
        Tensor grad = input_gradient(target, x_adv, y, cfg.loss);
        x_adv = ops::axpy(x_adv, cfg.step_size, ops::sign(grad));
        project_linf(x_adv, x, cfg.epsilon, cfg.clamp_lo, cfg.clamp_hi);
    }

    out.success = success_flags(target, x_adv, y);
    out.adv = std::move(x_adv);
    return out;
}

AdversarialBatch pgd_attack(const Model& m, const Tensor& x, const std::vector<int>& y,
                            const AttackConfig& cfg) {
    return pgd_attack(ModelTarget(m), x, y, cfg);
}

AdversarialBatch cw_margin_attack(const AttackTarget& target, const Tensor& x,
                                  const std::vector<int>& y, const AttackConfig& cfg) {
    AttackConfig c = cfg;
    c.loss = AttackLoss::CwMargin;
    return pgd_attack(target, x, y, c);
}

AdversarialBatch cw_margin_attack(const Model& m, const Tensor& x, const std::vector<int>& y,
                                  const AttackConfig& cfg) {
    return cw_margin_attack(ModelTarget(m), x, y, cfg);
}

double transfer_attack(const Model& source, const Model& target, const Tensor& x,
                       const std::vector<int>& y, const AttackConfig& cfg) {
    if (source.config().input_shape != target.config().input_shape)
        throw ShapeMismatchError("transfer_attack: input shapes differ");
    AdversarialBatch batch = pgd_attack(source, x, y, cfg);
    return target.accuracy(batch.adv, y);
}

void save_adversarial_batch(const AdversarialBatch& batch, const AttackConfig& cfg,
                            const std::string& attack_name, const std::string& base_path) {
    {
        std::ofstream bin(base_path + ".bin", std::ios::binary);
        if (!bin) throw IoError("cannot open " + base_path + ".bin");
        for (double v : batch.adv.values()) {
            const float f = static_cast<float>(v);
            bin.write(reinterpret_cast<const char*>(&f), sizeof(float));
        }
    }
    nlohmann::json sidecar;
    sidecar["shape"] = batch.adv.shape();
    sidecar["epsilon"] = cfg.epsilon;
    sidecar["attack"] = attack_name;
    sidecar["seed"] = cfg.seed;
    sidecar["labels"] = batch.labels;
    std::ofstream js(base_path + ".json", std::ios::binary);
    if (!js) throw IoError("cannot open " + base_path + ".json");
    js << sidecar.dump(2) << "\n";
}

AdversarialBatch load_adversarial_batch(const std::string& base_path) {
    std::ifstream js(base_path + ".json", std::ios::binary);
    if (!js) throw IoError("cannot open " + base_path + ".json");
    nlohmann::json sidecar = nlohmann::json::parse(js);
    const std::vector<int> shape = sidecar.at("shape").get<std::vector<int>>();

    AdversarialBatch out;
    out.labels = sidecar.at("labels").get<std::vector<int>>();
    Tensor adv(shape);
    std::ifstream bin(base_path + ".bin", std::ios::binary);
    if (!bin) throw IoError("cannot open " + base_path + ".bin");
    for (std::size_t i = 0; i < adv.size(); ++i) {
        float f = 0.0f;
        bin.read(reinterpret_cast<char*>(&f), sizeof(float));
        if (!bin) throw TruncatedFileError(base_path + ".bin shorter than its shape");
        adv[i] = static_cast<double>(f);
    }
    out.adv = std::move(adv);
    return out;
}

}  // namespace fmrgc
