#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fmrgc/tensor.hpp"

namespace fmrgc {

// How channel maps are summarized into graph-node descriptors.
struct PoolingMode {
    enum class Kind { GlobalAvg, None, BlockAvg };
    Kind kind = Kind::GlobalAvg;
    int block = 0;  // BlockAvg kernel

    static PoolingMode global_avg() { return {Kind::GlobalAvg, 0}; }
    static PoolingMode none() { return {Kind::None, 0}; }
    static PoolingMode block_avg(int p) { return {Kind::BlockAvg, p}; }

    std::string name() const;
    bool operator==(const PoolingMode&) const = default;
};

// One fixed-length descriptor per channel.
struct DescriptorSet {
    int count = 0;  // channels C
    int dim = 0;    // descriptor length m
    std::vector<double> data;  // C x m, row-major
    PoolingMode mode;

    std::span<const double> descriptor(int i) const {
        return {data.data() + static_cast<std::size_t>(i) * dim, static_cast<std::size_t>(dim)};
    }
};

// Gaussian-kernel similarity; the diagonal carries the most-negative finite
// double and is treated as minus infinity by every comparison.
struct SimilarityMatrix {
    int count = 0;
    std::vector<double> s;  // C x C
    double sigma_sq = 1.0;

    double at(int i, int j) const { return s[static_cast<std::size_t>(i) * count + j]; }
};

struct ChannelGraph {
    int count = 0;
    int k = 0;
    bool undirected = true;
    std::vector<std::uint8_t> adj;  // C x C, no self-loops stored

    bool edge(int i, int j) const { return adj[static_cast<std::size_t>(i) * count + j] != 0; }
    int out_degree(int i) const;
    int edge_count() const;
};

// P = D~^{-1/2} (A + I) D~^{-1/2}
struct PropagationMatrix {
    int count = 0;
    std::vector<double> p;

    double at(int i, int j) const { return p[static_cast<std::size_t>(i) * count + j]; }
    Tensor to_tensor() const { return Tensor({count, count}, p); }
};

// Pools each channel of a [C,H,W] tensor into its descriptor.
DescriptorSet channel_descriptors(const Tensor& x_chw, PoolingMode mode);

// Median of pairwise squared distances; 1.0 when the median is zero.
double sigma_from_descriptors(const DescriptorSet& d);

SimilarityMatrix similarity_matrix(const DescriptorSet& d, double sigma_sq);

// Per row, edges to the k most similar channels; ties go to the lower index;
// undirected graphs take the union with the transpose.
ChannelGraph topk_graph(const SimilarityMatrix& s, int k, bool undirected);

PropagationMatrix propagation_matrix(const ChannelGraph& g);

// Power-iteration estimate of the spectral radius.
double spectral_radius_estimate(const PropagationMatrix& p, int iters = 200);

// Debug dump: edge list as "i,j" CSV plus a JSON header alongside.
void write_graph_csv(const ChannelGraph& g, const std::string& path);
void write_graph_header_json(const ChannelGraph& g, double sigma_sq, const std::string& path);

}  // namespace fmrgc
