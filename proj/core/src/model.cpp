#include "fmrgc/model.hpp"

#include <cmath>

#include "fmrgc/errors.hpp"
#include "fmrgc/ops.hpp"
#include "fmrgc/rng.hpp"

namespace fmrgc {

std::uint64_t fnv1a64(const void* data, std::size_t len, std::uint64_t seed) {
    const unsigned char* bytes = static_cast<const unsigned char*>(data);
    std::uint64_t h = seed;
    for (std::size_t i = 0; i < len; ++i) {
        h ^= bytes[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

Model::Model(const BackboneConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    if (cfg.num_classes < 2) throw BadConfigError("backbone: num_classes must be >= 2");
    for (int w : cfg.widths)
        if (w < 1) throw BadConfigError("backbone: stage widths must be positive");
    if (cfg.input_shape[1] < 2 || cfg.input_shape[2] < 2)
        throw BadConfigError("backbone: input spatial extent too small");

    Rng rng(seed);
    auto he_normal = [&](std::vector<int> shape, int fan_in) {
        Tensor t(std::move(shape));
        const double stddev = std::sqrt(2.0 / fan_in);
        for (std::size_t i = 0; i < t.size(); ++i) t[i] = stddev * rng.normal();
        return t;
    };

    int in_channels = cfg.input_shape[0];
    int extent = cfg.input_shape[1];
    if (cfg.input_shape[1] != cfg.input_shape[2])
        throw BadConfigError("backbone: expects square inputs");

    for (int s = 0; s < 3; ++s) {
        const int out_channels = cfg.widths[static_cast<std::size_t>(s)];
        const std::string stage = "conv" + std::to_string(s + 1);
        conv_w_index_[static_cast<std::size_t>(s)] = static_cast<int>(params_.size());
        params_.push_back({stage + ".weight",
                           he_normal({out_channels, in_channels, 3, 3}, in_channels * 9), true});
        conv_b_index_[static_cast<std::size_t>(s)] = static_cast<int>(params_.size());
        params_.push_back({stage + ".bias", Tensor({out_channels}), true});

        extent = ops::conv_out_extent(extent, 3, 2, 1);
        if (extent < 1) throw BadConfigError("backbone: input too small for three stages");
        stage_extent_[static_cast<std::size_t>(s)] = extent;

        const SlotConfig& slot = cfg.slots[static_cast<std::size_t>(s)];
        if (slot.enabled) {
            if (slot.fmr.k < 1 || slot.fmr.k >= out_channels)
                throw BadConfigError(stage + " slot: k must be in [1, channels-1]");
            if (slot.fmr.pooling.kind == PoolingMode::Kind::BlockAvg &&
                (slot.fmr.pooling.block <= 0 || extent % slot.fmr.pooling.block != 0))
                throw BadConfigError(stage + " slot: pooling kernel must divide the feature size");
            const int d = extent * extent;
            Tensor theta = slot.fmr.identity_theta
                               ? identity_matrix(d)
                               : init_theta(d, rng.next_u64());
            theta_index_[static_cast<std::size_t>(s)] = static_cast<int>(params_.size());
            params_.push_back({stage + ".fmrgc.theta2", std::move(theta), slot.fmr.train_theta});
        }
        in_channels = out_channels;
    }

    head_w_index_ = static_cast<int>(params_.size());
    params_.push_back({"head.weight", he_normal({cfg.widths[2], cfg.num_classes}, cfg.widths[2]), true});
    head_b_index_ = static_cast<int>(params_.size());
    params_.push_back({"head.bias", Tensor({cfg.num_classes}), true});
}

int Model::slot_spatial_dim(int stage) const {
    const int e = stage_extent_[static_cast<std::size_t>(stage)];
    return e * e;
}

Model::Binding Model::bind(Graph& g, bool params_require_grad) const {
    Binding b;
    b.vars.reserve(params_.size());
    for (const Parameter& p : params_)
        b.vars.push_back(g.leaf(p.value, params_require_grad && p.trainable));
    return b;
}

Var Model::forward(Graph& g, const Binding& binding, Var x_nchw) const {
    Var h = x_nchw;
    for (int s = 0; s < 3; ++s) {
        h = g.conv2d(h, binding.vars[static_cast<std::size_t>(conv_w_index_[static_cast<std::size_t>(s)])],
                     binding.vars[static_cast<std::size_t>(conv_b_index_[static_cast<std::size_t>(s)])], 2, 1);
        h = g.relu(h);
        if (theta_index_[static_cast<std::size_t>(s)] >= 0) {
            h = fmr_gc_forward_batch(
                g, h, binding.vars[static_cast<std::size_t>(theta_index_[static_cast<std::size_t>(s)])],
                cfg_.slots[static_cast<std::size_t>(s)].fmr);
        }
    }
    Var feat = g.global_avg_pool(h);
    Var logits = g.matmul(feat, binding.vars[static_cast<std::size_t>(head_w_index_)]);
    return g.add_row_bias(logits, binding.vars[static_cast<std::size_t>(head_b_index_)]);
}

Tensor Model::logits(const Tensor& x_nchw) const {
    Graph g;
    Binding b = bind(g, false);
    Var x = g.leaf(x_nchw, false);
    return forward(g, b, x).value();
}

std::vector<int> Model::predict(const Tensor& x_nchw) const {
    return ops::argmax_rows(logits(x_nchw));
}

double Model::accuracy(const Tensor& x_nchw, const std::vector<int>& labels) const {
    const std::vector<int> pred = predict(x_nchw);
    int correct = 0;
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (pred[i] == labels[i]) ++correct;
    return labels.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(labels.size());
}

long long Model::param_count() const {
    long long total = 0;
    for (const Parameter& p : params_) total += static_cast<long long>(p.value.size());
    return total;
}

std::uint64_t Model::param_hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const Parameter& p : params_)
        h = fnv1a64(p.value.data(), p.value.size() * sizeof(double), h);
    return h;
}

}  // namespace fmrgc
