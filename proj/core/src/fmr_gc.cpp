#include "fmrgc/fmr_gc.hpp"

#include <array>
#include <cmath>

#include "fmrgc/errors.hpp"
#include "fmrgc/ops.hpp"
#include "fmrgc/rng.hpp"

namespace fmrgc {

GraphSignal flatten_to_signal(const Tensor& x_chw) {
    if (x_chw.rank() != 3)
        throw ShapeMismatchError("flatten_to_signal: expected [C,H,W], got " +
                                 Tensor::shape_string(x_chw.shape()));
    GraphSignal out;
    out.channels = x_chw.dim(0);
    out.height = x_chw.dim(1);
    out.width = x_chw.dim(2);
    out.matrix = x_chw.reshaped({out.channels, out.height * out.width});
    return out;
}

Tensor reshape_from_signal(const GraphSignal& f) {
    return f.matrix.reshaped({f.channels, f.height, f.width});
}

PropagationMatrix build_propagation(const Tensor& x_chw, const FmrGcConfig& cfg,
                                    double* sigma_sq_out) {
    DescriptorSet desc = channel_descriptors(x_chw, cfg.pooling);
    const double sigma_sq = cfg.sigma.kind == SigmaRule::Kind::Median
                                ? sigma_from_descriptors(desc)
                                : cfg.sigma.fixed_value;
    if (sigma_sq_out) *sigma_sq_out = sigma_sq;
    SimilarityMatrix sim = similarity_matrix(desc, sigma_sq);
    ChannelGraph graph = topk_graph(sim, cfg.k, /*undirected=*/true);
    return propagation_matrix(graph);
}

Tensor fmr_gc_forward(const Tensor& x_chw, const FmrGcParams& params) {
    GraphSignal signal = flatten_to_signal(x_chw);
    const int d = signal.height * signal.width;
    if (params.theta2.rank() != 2 || params.theta2.dim(0) != d || params.theta2.dim(1) != d)
        throw ShapeMismatchError("fmr_gc_forward: theta2 side " +
                                 Tensor::shape_string(params.theta2.shape()) +
                                 " does not match spatial size " + std::to_string(d));
    Tensor p;
    if (signal.channels == 1) {
        p = Tensor({1, 1}, {1.0});
    } else {
        p = build_propagation(x_chw, params.cfg).to_tensor();
    }
    Tensor aggregated = ops::matmul(p, signal.matrix);
    Tensor transformed = ops::matmul(aggregated, params.theta2);
    Tensor activated = ops::relu(transformed);
    Tensor out = ops::add(activated, signal.matrix);
    return out.reshaped({signal.channels, signal.height, signal.width});
}

Var fmr_gc_forward(Graph& g, Var x_chw, Var theta2, const FmrGcConfig& cfg) {
    const std::vector<int>& shape = x_chw.value().shape();
    if (shape.size() != 3) throw ShapeMismatchError("fmr_gc_forward: expected [C,H,W] input");
    const int c = shape[0], h = shape[1], w = shape[2];
    const int d = h * w;
    if (theta2.value().rank() != 2 || theta2.value().dim(0) != d || theta2.value().dim(1) != d)
        throw ShapeMismatchError("fmr_gc_forward: theta2 side does not match spatial size " +
                                 std::to_string(d));

    Tensor p = (c == 1) ? Tensor({1, 1}, {1.0}) : build_propagation(x_chw.value(), cfg).to_tensor();
    Var propagation = g.constant(std::move(p));
    Var f = g.reshape(x_chw, {c, d});
    Var aggregated = g.matmul(propagation, f);
    Var transformed = g.matmul(aggregated, theta2);
    Var activated = g.relu(transformed);
    Var out = g.add(activated, f);
    return g.reshape(out, {c, h, w});
}

Var fmr_gc_forward_batch(Graph& g, Var x_nchw, Var theta2, const FmrGcConfig& cfg) {
    const std::vector<int>& shape = x_nchw.value().shape();
    if (shape.size() != 4) throw ShapeMismatchError("fmr_gc_forward_batch: expected [N,C,H,W]");
    const int n = shape[0];
    std::vector<Var> outputs;
    outputs.reserve(static_cast<std::size_t>(n));
    for (int s = 0; s < n; ++s) {
        Var sample = g.select(x_nchw, s);
        outputs.push_back(fmr_gc_forward(g, sample, theta2, cfg));
    }
    return g.stack(outputs);
}

Tensor init_theta(int d, std::uint64_t seed) {
    if (d < 1) throw BadConfigError("init_theta: d must be positive");
    Rng rng(seed);
    const double bound = std::sqrt(6.0 / (d + d));
    Tensor theta({d, d});
    for (std::size_t i = 0; i < theta.size(); ++i) theta[i] = rng.uniform(-bound, bound);
    return theta;
}

Tensor identity_matrix(int d) {
    Tensor eye({d, d});
    for (int i = 0; i < d; ++i) eye[static_cast<std::size_t>(i) * d + i] = 1.0;
    return eye;
}

long long extra_param_count(int d) {
    return static_cast<long long>(d) * static_cast<long long>(d);
}

}  // namespace fmrgc
