#pragma once

#include <cstdint>

#include "fmrgc/channel_graph.hpp"
#include "fmrgc/graph.hpp"
#include "fmrgc/tensor.hpp"

namespace fmrgc {

struct SigmaRule {
    enum class Kind { Median, Fixed };
    Kind kind = Kind::Median;
    double fixed_value = 1.0;

    static SigmaRule median() { return {Kind::Median, 1.0}; }
    static SigmaRule fixed(double sigma_sq) { return {Kind::Fixed, sigma_sq}; }
    bool operator==(const SigmaRule&) const = default;
};

// Graph-construction settings of one calibration layer. theta2 itself lives
// with the host model's parameters.
struct FmrGcConfig {
    int k = 5;
    PoolingMode pooling = PoolingMode::global_avg();
    SigmaRule sigma;
    bool train_theta = true;      // false: theta2 excluded from updates
    bool identity_theta = false;  // init theta2 = I (propagation-only variant)
    bool operator==(const FmrGcConfig&) const = default;
};

struct FmrGcParams {
    Tensor theta2;  // d x d, d = H*W at the insertion point
    FmrGcConfig cfg;
};

// Rows are row-major flattened channel maps (C x H*W); reshaping back is a
// bit-exact inverse.
struct GraphSignal {
    Tensor matrix;
    int channels = 0;
    int height = 0;
    int width = 0;
};

GraphSignal flatten_to_signal(const Tensor& x_chw);
Tensor reshape_from_signal(const GraphSignal& f);

// descriptors -> sigma -> similarity -> top-k -> normalized propagation,
// all from the tensor's current values.
PropagationMatrix build_propagation(const Tensor& x_chw, const FmrGcConfig& cfg,
                                    double* sigma_sq_out = nullptr);

// reshape(relu(P F theta2) + F); the graph is rebuilt from the live input.
Tensor fmr_gc_forward(const Tensor& x_chw, const FmrGcParams& params);

// Differentiable version for one sample. The propagation matrix enters as a
// constant: the top-k topology is piecewise constant in x and receives no
// gradient; gradients flow through F and theta2.
Var fmr_gc_forward(Graph& g, Var x_chw, Var theta2, const FmrGcConfig& cfg);

// Applies the layer to every sample of an [N,C,H,W] batch.
Var fmr_gc_forward_batch(Graph& g, Var x_nchw, Var theta2, const FmrGcConfig& cfg);

// Uniform in [-sqrt(6/(2d)), +sqrt(6/(2d))], deterministic in the seed.
Tensor init_theta(int d, std::uint64_t seed);

Tensor identity_matrix(int d);

long long extra_param_count(int d);  // d^2: theta2 only, no bias

}  // namespace fmrgc
