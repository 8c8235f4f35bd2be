#include "fmrgc/channel_graph.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include <nlohmann/json.hpp>

#include "fmrgc/errors.hpp"
#include "fmrgc/ops.hpp"

namespace fmrgc {

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::max();
}

std::string PoolingMode::name() const {
    switch (kind) {
        case Kind::GlobalAvg: return "global_avg";
        case Kind::None: return "none";
        case Kind::BlockAvg: return "block_avg" + std::to_string(block);
    }
    return "?";
}

int ChannelGraph::out_degree(int i) const {
    int deg = 0;
    for (int j = 0; j < count; ++j) deg += adj[static_cast<std::size_t>(i) * count + j] ? 1 : 0;
    return deg;
}

int ChannelGraph::edge_count() const {
    int total = 0;
    for (std::uint8_t e : adj) total += e ? 1 : 0;
    return total;
}

DescriptorSet channel_descriptors(const Tensor& x_chw, PoolingMode mode) {
    if (x_chw.rank() != 3)
        throw ShapeMismatchError("channel_descriptors: expected [C,H,W], got " +
                                 Tensor::shape_string(x_chw.shape()));
    const int c = x_chw.dim(0), h = x_chw.dim(1), w = x_chw.dim(2);

    DescriptorSet out;
    out.count = c;
    out.mode = mode;
    // Pools run through the shared [N,C,H,W] kernels with N=1.
    const Tensor as_batch = x_chw.reshaped({1, c, h, w});
    switch (mode.kind) {
        case PoolingMode::Kind::GlobalAvg: {
            Tensor pooled = ops::global_avg_pool(as_batch);
            out.dim = 1;
            out.data.assign(pooled.data(), pooled.data() + pooled.size());
            break;
        }
        case PoolingMode::Kind::None: {
            out.dim = h * w;
            out.data.assign(x_chw.data(), x_chw.data() + x_chw.size());
            break;
        }
        case PoolingMode::Kind::BlockAvg: {
            Tensor pooled = ops::block_avg_pool(as_batch, mode.block);
            out.dim = (h / mode.block) * (w / mode.block);
            out.data.assign(pooled.data(), pooled.data() + pooled.size());
            break;
        }
    }
    return out;
}

double sigma_from_descriptors(const DescriptorSet& d) {
    const int c = d.count;
    if (c < 2) throw BadConfigError("sigma_from_descriptors: needs at least 2 channels");
    std::vector<double> dists;
    dists.reserve(static_cast<std::size_t>(c) * (c - 1) / 2);
    for (int i = 0; i < c; ++i) {
        std::span<const double> di = d.descriptor(i);
        for (int j = i + 1; j < c; ++j) {
            std::span<const double> dj = d.descriptor(j);
            double acc = 0.0;
            for (int t = 0; t < d.dim; ++t) {
                const double diff = di[static_cast<std::size_t>(t)] - dj[static_cast<std::size_t>(t)];
                acc += diff * diff;
            }
            dists.push_back(acc);
        }
    }
    const std::size_t n = dists.size();
    std::nth_element(dists.begin(), dists.begin() + static_cast<long>(n / 2), dists.end());
    double median = dists[n / 2];
    if (n % 2 == 0) {
        const double lower =
            *std::max_element(dists.begin(), dists.begin() + static_cast<long>(n / 2));
        median = 0.5 * (median + lower);
    }
    return median > 0.0 ? median : 1.0;
}

SimilarityMatrix similarity_matrix(const DescriptorSet& d, double sigma_sq) {
    const int c = d.count;
    if (!(sigma_sq > 0.0)) throw BadConfigError("similarity_matrix: sigma_sq must be positive");
    SimilarityMatrix out;
    out.count = c;
    out.sigma_sq = sigma_sq;
    out.s.assign(static_cast<std::size_t>(c) * c, 0.0);
    const double inv = 1.0 / sigma_sq;
    for (int i = 0; i < c; ++i) {
        out.s[static_cast<std::size_t>(i) * c + i] = kNegInf;
        std::span<const double> di = d.descriptor(i);
        for (int j = i + 1; j < c; ++j) {
            std::span<const double> dj = d.descriptor(j);
            double acc = 0.0;
            for (int t = 0; t < d.dim; ++t) {
                const double diff = di[static_cast<std::size_t>(t)] - dj[static_cast<std::size_t>(t)];
                acc += diff * diff;
            }
            const double sim = std::exp(-acc * inv);
            out.s[static_cast<std::size_t>(i) * c + j] = sim;
            out.s[static_cast<std::size_t>(j) * c + i] = sim;
        }
    }
    return out;
}

ChannelGraph topk_graph(const SimilarityMatrix& s, int k, bool undirected) {
    const int c = s.count;
    if (k < 1 || k >= c)
        throw KTooLargeError("topk_graph: k=" + std::to_string(k) + " with C=" + std::to_string(c));

    ChannelGraph g;
    g.count = c;
    g.k = k;
    g.undirected = undirected;
    g.adj.assign(static_cast<std::size_t>(c) * c, 0);

    std::vector<int> order(static_cast<std::size_t>(c));
    for (int i = 0; i < c; ++i) {
        std::iota(order.begin(), order.end(), 0);
        // Highest similarity first; equal scores resolve to the lower index.
        // The diagonal holds the most-negative finite value so it always
        // sorts behind every real neighbor.
        std::sort(order.begin(), order.end(), [&](int a, int b) {
            const double sa = s.at(i, a), sb = s.at(i, b);
            if (sa != sb) return sa > sb;
            return a < b;
        });
        for (int t = 0; t < k; ++t) g.adj[static_cast<std::size_t>(i) * c + order[static_cast<std::size_t>(t)]] = 1;
    }
    if (undirected) {
        for (int i = 0; i < c; ++i)
            for (int j = i + 1; j < c; ++j) {
                const std::uint8_t e = g.adj[static_cast<std::size_t>(i) * c + j] |
                                       g.adj[static_cast<std::size_t>(j) * c + i];
                g.adj[static_cast<std::size_t>(i) * c + j] = e;
                g.adj[static_cast<std::size_t>(j) * c + i] = e;
            }
    }
    return g;
}

PropagationMatrix propagation_matrix(const ChannelGraph& g) {
    const int c = g.count;
    std::vector<double> inv_sqrt_deg(static_cast<std::size_t>(c));
    for (int i = 0; i < c; ++i) {
        double deg = 1.0;  // self-loop
        for (int j = 0; j < c; ++j) deg += g.edge(i, j) ? 1.0 : 0.0;
        inv_sqrt_deg[static_cast<std::size_t>(i)] = 1.0 / std::sqrt(deg);
    }
    PropagationMatrix out;
    out.count = c;
    out.p.assign(static_cast<std::size_t>(c) * c, 0.0);
    for (int i = 0; i < c; ++i) {
        for (int j = 0; j < c; ++j) {
            const bool connected = (i == j) || g.edge(i, j);
            if (connected)
                out.p[static_cast<std::size_t>(i) * c + j] =
                    inv_sqrt_deg[static_cast<std::size_t>(i)] * inv_sqrt_deg[static_cast<std::size_t>(j)];
        }
    }
    return out;
}

double spectral_radius_estimate(const PropagationMatrix& p, int iters) {
    const int c = p.count;
    std::vector<double> v(static_cast<std::size_t>(c), 1.0 / std::sqrt(static_cast<double>(c)));
    std::vector<double> w(static_cast<std::size_t>(c));
    double lambda = 0.0;
    for (int it = 0; it < iters; ++it) {
        for (int i = 0; i < c; ++i) {
            double acc = 0.0;
            for (int j = 0; j < c; ++j) acc += p.at(i, j) * v[static_cast<std::size_t>(j)];
            w[static_cast<std::size_t>(i)] = acc;
        }
        double norm = 0.0;
        for (double x : w) norm += x * x;
        norm = std::sqrt(norm);
        if (norm == 0.0) return 0.0;
        lambda = norm;
        for (int i = 0; i < c; ++i) v[static_cast<std::size_t>(i)] = w[static_cast<std::size_t>(i)] / norm;
    }
    return lambda;
}

void write_graph_csv(const ChannelGraph& g, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path);
    out << "i,j\n";
    for (int i = 0; i < g.count; ++i)
        for (int j = 0; j < g.count; ++j)
            if (g.edge(i, j)) out << i << "," << j << "\n";
}

void write_graph_header_json(const ChannelGraph& g, double sigma_sq, const std::string& path) {
    nlohmann::json j;
    j["C"] = g.count;
    j["k"] = g.k;
    j["undirected"] = g.undirected;
    j["sigma_sq"] = sigma_sq;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path);
    out << j.dump(2) << "\n";
}

}  // namespace fmrgc
