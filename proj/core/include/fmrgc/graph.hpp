#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "fmrgc/ops.hpp"
#include "fmrgc/tensor.hpp"

namespace fmrgc {

class Graph;

// Handle to a node in a Graph. Cheap to copy; valid as long as the Graph is.
class Var {
  public:
    Var() = default;

    const Tensor& value() const;
    const Tensor& grad() const;
    bool requires_grad() const;
    const std::vector<int>& shape() const { return value().shape(); }

    int id() const { return id_; }

  private:
    friend class Graph;
    Var(Graph* g, int id) : g_(g), id_(id) {}
    Graph* g_ = nullptr;
    int id_ = -1;
};

// Define-by-run computation record. Each operation appends one node holding
// the op id, input ids, the forward value, a replay closure and a backward
// closure, so the record is topologically ordered by construction. Node
// values are immutable once recorded; backward() seeds a scalar and walks
// the record in reverse, accumulating into leaf gradients.
class Graph {
  public:
    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    Var leaf(Tensor value, bool requires_grad);
    Var constant(Tensor value) { return leaf(std::move(value), false); }

    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    Var scale(Var a, double c);
    Var neg(Var a);
    Var exp(Var a);
    Var square(Var a);
    Var relu(Var a);
    Var matmul(Var a, Var b);
    Var conv2d(Var x, Var w, int stride, int pad);
    Var conv2d(Var x, Var w, Var bias, int stride, int pad);
    Var global_avg_pool(Var x);
    Var block_avg_pool(Var x, int p);
    Var reshape(Var x, std::vector<int> shape);
    Var add_row_bias(Var x, Var bias);
    Var select(Var x, int index);            // [N,...] -> [...]
    Var stack(std::span<const Var> parts);   // k x [...] -> [k,...]
    Var sum(Var x);
    Var l2_norm(Var x);
    Var softmax_cross_entropy(Var logits, std::vector<int> labels);
    Var kl_div_softmax(Var p_logits, Var q_logits);
    Var cw_margin(Var logits, std::vector<int> labels);

    // Seeds the scalar loss with gradient 1 and accumulates gradients into
    // every requires_grad node on its path. Throws NotScalarError otherwise.
    void backward(Var loss);

    // Re-executes every recorded forward closure and checks the recomputed
    // values against the recorded ones bit-for-bit.
    bool replay_matches() const;

    std::size_t num_nodes() const { return nodes_.size(); }
    const std::string& op_name(int id) const { return nodes_[static_cast<std::size_t>(id)].op; }

  private:
    friend class Var;

    struct Node {
        std::string op;
        std::vector<int> inputs;
        Tensor value;
        Tensor grad;  // allocated lazily, zero-initialized
        bool requires_grad = false;
        bool grad_allocated = false;
        std::function<void(Graph&, const Node&)> backward;
        std::function<Tensor(const Graph&)> replay;
        std::vector<int> labels;  // classifier ops
        std::vector<Tensor> saved;
    };

    const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }
    Node& node(int id) { return nodes_[static_cast<std::size_t>(id)]; }
    const Tensor& value_of(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
    Tensor& grad_buffer(int id);
    void accumulate_grad(int id, const Tensor& g);

    Var make_node(Node&& n);
    bool any_requires(std::span<const int> ids) const;

    std::vector<Node> nodes_;
};

}  // namespace fmrgc
