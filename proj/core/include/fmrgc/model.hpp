#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "fmrgc/fmr_gc.hpp"
#include "fmrgc/graph.hpp"
#include "fmrgc/tensor.hpp"

namespace fmrgc {

struct SlotConfig {
    bool enabled = false;
    FmrGcConfig fmr;
    bool operator==(const SlotConfig&) const = default;
};

// Desk-scale stand-in for the big residual backbones: three 3x3 stride-2
// convolution stages with calibration slots after each stage's rectifier,
// then a global-average-pool head.
struct BackboneConfig {
    std::array<int, 3> input_shape{3, 32, 32};  // C,H,W
    std::array<int, 3> widths{16, 32, 64};
    int num_classes = 10;
    std::array<SlotConfig, 3> slots{};  // conv1..conv3

    bool operator==(const BackboneConfig&) const = default;
};

struct Parameter {
    std::string name;
    Tensor value;
    bool trainable = true;
};

class Model {
  public:
    Model(const BackboneConfig& cfg, std::uint64_t seed);

    const BackboneConfig& config() const { return cfg_; }

    std::vector<Parameter>& parameters() { return params_; }
    const std::vector<Parameter>& parameters() const { return params_; }

    // Parameter leaves for one training/attack step. Leaves require grad
    // only when both the binding asks for it and the parameter is trainable.
    struct Binding {
        std::vector<Var> vars;
    };
    Binding bind(Graph& g, bool params_require_grad) const;

    Var forward(Graph& g, const Binding& binding, Var x_nchw) const;

    // Convenience paths that build a throwaway graph.
    Tensor logits(const Tensor& x_nchw) const;
    std::vector<int> predict(const Tensor& x_nchw) const;
    double accuracy(const Tensor& x_nchw, const std::vector<int>& labels) const;

    long long param_count() const;
    std::uint64_t param_hash() const;

    // Spatial side and channel count seen by slot `stage` (0-based).
    int slot_channels(int stage) const { return cfg_.widths[static_cast<std::size_t>(stage)]; }
    int slot_spatial_dim(int stage) const;  // H*W at the slot

    int num_stages() const { return 3; }

  private:
    BackboneConfig cfg_;
    std::vector<Parameter> params_;
    std::array<int, 3> stage_extent_{};   // spatial side after each stage
    std::array<int, 3> theta_index_{-1, -1, -1};  // parameter index per slot
    std::array<int, 3> conv_w_index_{};
    std::array<int, 3> conv_b_index_{};
    int head_w_index_ = -1;
    int head_b_index_ = -1;
};

std::uint64_t fnv1a64(const void* data, std::size_t len, std::uint64_t seed = 0xcbf29ce484222325ULL);

}  // namespace fmrgc
