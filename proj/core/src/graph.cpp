#include "fmrgc/graph.hpp"

#include <algorithm>
#include <utility>

namespace fmrgc {

const Tensor& Var::value() const { return g_->value_of(id_); }

const Tensor& Var::grad() const { return g_->grad_buffer(id_); }

bool Var::requires_grad() const { return g_->node(id_).requires_grad; }

Tensor& Graph::grad_buffer(int id) {
    Node& n = node(id);
    if (!n.grad_allocated) {
        n.grad = Tensor(n.value.shape());
        n.grad_allocated = true;
    }
    return n.grad;
}

void Graph::accumulate_grad(int id, const Tensor& g) {
    Tensor& dst = grad_buffer(id);
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
}

Var Graph::make_node(Node&& n) {
    ops::check_finite(n.value, n.op.c_str());
    nodes_.push_back(std::move(n));
    return Var(this, static_cast<int>(nodes_.size()) - 1);
}

bool Graph::any_requires(std::span<const int> ids) const {
    return std::any_of(ids.begin(), ids.end(),
                       [&](int id) { return node(id).requires_grad; });
}

Var Graph::leaf(Tensor value, bool requires_grad) {
    Node n;
    n.op = "leaf";
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Graph::add(Var a, Var b) {
    Node n;
    n.op = "add";
    n.inputs = {a.id_, b.id_};
    n.value = ops::add(a.value(), b.value());
    n.requires_grad = any_requires(n.inputs);
    n.replay = [ia = a.id_, ib = b.id_](const Graph& g) {
        return ops::add(g.value_of(ia), g.value_of(ib));
    };
    n.backward = [](Graph& g, const Node& self) {
        if (g.node(self.inputs[0]).requires_grad) g.accumulate_grad(self.inputs[0], self.grad);
        if (g.node(self.inputs[1]).requires_grad) g.accumulate_grad(self.inputs[1], self.grad);
    };
    return make_node(std::move(n));
}

Var Graph::sub(Var a, Var b) {
    Node n;
    n.op = "sub";
    n.inputs = {a.id_, b.id_};
    n.value = ops::sub(a.value(), b.value());
    n.requires_grad = any_requires(n.inputs);
    n.replay = [ia = a.id_, ib = b.id_](const Graph& g) {
        return ops::sub(g.value_of(ia), g.value_of(ib));
    };
    n.backward = [](Graph& g, const Node& self) {
        if (g.node(self.inputs[0]).requires_grad) g.accumulate_grad(self.inputs[0], self.grad);
        if (g.node(self.inputs[1]).requires_grad) {
            Tensor& dst = g.grad_buffer(self.inputs[1]);
            for (std::size_t i = 0; i < dst.size(); ++i) dst[i] -= self.grad[i];
        }
    };
    return make_node(std::move(n));
}

Var Graph::mul(Var a, Var b) {
    Node n;
    n.op = "mul";
    n.inputs = {a.id_, b.id_};
    n.value = ops::mul(a.value(), b.value());
    n.requires_grad = any_requires(n.inputs);
    n.replay = [ia = a.id_, ib = b.id_](const Graph& g) {
        return ops::mul(g.value_of(ia), g.value_of(ib));
    };
    n.backward = [](Graph& g, const Node& self) {
        const Tensor& va = g.value_of(self.inputs[0]);
        const Tensor& vb = g.value_of(self.inputs[1]);
        if (g.node(self.inputs[0]).requires_grad) {
            Tensor& dst = g.grad_buffer(self.inputs[0]);
            for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += self.grad[i] * vb[i];
        }
        if (g.node(self.inputs[1]).requires_grad) {
            Tensor& dst = g.grad_buffer(self.inputs[1]);
            for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += self.grad[i] * va[i];
        }
    };
    return make_node(std::move(n));
}

Var Graph::scale(Var a, double c) {
    Node n;
    n.op = "scale";
    n.inputs = {a.id_};
    n.value = ops::scale(a.value(), c);
    n.requires_grad = any_requires(n.inputs);
    n.replay = [ia = a.id_, c](const Graph& g) { return ops::scale(g.value_of(ia), c); };
    n.backward = [c](Graph& g, const Node& self) {
        if (!g.node(self.inputs[0]).requires_grad) return;
        Tensor& dst = g.grad_buffer(self.inputs[0]);
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += c * self.grad[i];
    };
    return make_node(std::move(n));
}

Var Graph::neg(Var a) { return scale(a, -1.0); }

Var Graph::exp(Var a) {
    Node n;
    n.op = "exp";
    n.inputs = {a.id_};
    n.value = ops::exp(a.value());
    n.requires_grad = any_requires(n.inputs);
    n.replay = [ia = a.id_](const Graph& g) { return ops::exp(g.value_of(ia)); };
    n.backward = [](Graph& g, const Node& self) {
        if (!g.node(self.inputs[0]).requires_grad) return;
        Tensor& dst = g.grad_buffer(self.inputs[0]);
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += self.grad[i] * self.value[i];
    };
    return make_node(std::move(n));
}

Var Graph::square(Var a) {
    Node n;
    n.op = "square";
    n.inputs = {a.id_};
    n.value = ops::square(a.value());
    n.requires_grad = any_requires(n.inputs);
    n.replay = [ia = a.id_](const Graph& g) { return ops::square(g.value_of(ia)); };
    n.backward = [](Graph& g, const Node& self) {
        if (!g.node(self.inputs[0]).requires_grad) return;
        const Tensor& va = g.value_of(self.inputs[0]);
        Tensor& dst = g.grad_buffer(self.inputs[0]);
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += 2.0 * va[i] * self.grad[i];
    };
    return make_node(std::move(n));
}

Var Graph::relu(Var a) {
    Node n;
    n.op = "relu";
    n.inputs = {a.id_};
    n.value = ops::relu(a.value());
    n.requires_grad = any_requires(n.inputs);
    n.replay = [ia = a.id_](const Graph& g) { return ops::relu(g.value_of(ia)); };
    n.backward = [](Graph& g, const Node& self) {
        if (!g.node(self.inputs[0]).requires_grad) return;
        const Tensor& va = g.value_of(self.inputs[0]);
        Tensor& dst = g.grad_buffer(self.inputs[0]);
        for (std::size_t i = 0; i < dst.size(); ++i)
            if (va[i] > 0.0) dst[i] += self.grad[i];
    };
    return make_node(std::move(n));
}

Var Graph::matmul(Var a, Var b) {
    Node n;
    n.op = "matmul";
    n.inputs = {a.id_, b.id_};
    n.value = ops::matmul(a.value(), b.value());
    n.requires_grad = any_requires(n.inputs);
    n.replay = [ia = a.id_, ib = b.id_](const Graph& g) {
        return ops::matmul(g.value_of(ia), g.value_of(ib));
    };
    n.backward = [](Graph& g, const Node& self) {
        const Tensor& va = g.value_of(self.inputs[0]);
        const Tensor& vb = g.value_of(self.inputs[1]);
        if (g.node(self.inputs[0]).requires_grad)
            g.accumulate_grad(self.inputs[0], ops::matmul_nt(self.grad, vb));
        if (g.node(self.inputs[1]).requires_grad)
            g.accumulate_grad(self.inputs[1], ops::matmul_tn(va, self.grad));
    };
    return make_node(std::move(n));
}

Var Graph::conv2d(Var x, Var w, int stride, int pad) {
    Node n;
    n.op = "conv2d";
    n.inputs = {x.id_, w.id_};
    n.value = ops::conv2d(x.value(), w.value(), nullptr, stride, pad);
    n.requires_grad = any_requires(n.inputs);
    n.replay = [ix = x.id_, iw = w.id_, stride, pad](const Graph& g) {
        return ops::conv2d(g.value_of(ix), g.value_of(iw), nullptr, stride, pad);
    };
    n.backward = [stride, pad](Graph& g, const Node& self) {
        const bool need_x = g.node(self.inputs[0]).requires_grad;
        const bool need_w = g.node(self.inputs[1]).requires_grad;
        if (!need_x && !need_w) return;
        ops::conv2d_backward(g.value_of(self.inputs[0]), g.value_of(self.inputs[1]), self.grad,
                             stride, pad, need_x ? &g.grad_buffer(self.inputs[0]) : nullptr,
                             need_w ? &g.grad_buffer(self.inputs[1]) : nullptr, nullptr);
    };
    return make_node(std::move(n));
}

Var Graph::conv2d(Var x, Var w, Var bias, int stride, int pad) {
    Node n;
    n.op = "conv2d";
    n.inputs = {x.id_, w.id_, bias.id_};
    const Tensor& bt = bias.value();
    n.value = ops::conv2d(x.value(), w.value(), &bt, stride, pad);
    n.requires_grad = any_requires(n.inputs);
    n.replay = [ix = x.id_, iw = w.id_, ib = bias.id_, stride, pad](const Graph& g) {
        const Tensor& b = g.value_of(ib);
        return ops::conv2d(g.value_of(ix), g.value_of(iw), &b, stride, pad);
    };
    n.backward = [stride, pad](Graph& g, const Node& self) {
        const bool need_x = g.node(self.inputs[0]).requires_grad;
        const bool need_w = g.node(self.inputs[1]).requires_grad;
        const bool need_b = g.node(self.inputs[2]).requires_grad;
        if (!need_x && !need_w && !need_b) return;
        ops::conv2d_backward(g.value_of(self.inputs[0]), g.value_of(self.inputs[1]), self.grad,
                             stride, pad, need_x ? &g.grad_buffer(self.inputs[0]) : nullptr,
                             need_w ? &g.grad_buffer(self.inputs[1]) : nullptr,
                             need_b ? &g.grad_buffer(self.inputs[2]) : nullptr);
    };
    return make_node(std::move(n));
}

Var Graph::global_avg_pool(Var x) {
    Node n;
    n.op = "global_avg_pool";
    n.inputs = {x.id_};
    n.value = ops::global_avg_pool(x.value());
    n.requires_grad = any_requires(n.inputs);
    n.replay = [ix = x.id_](const Graph& g) { return ops::global_avg_pool(g.value_of(ix)); };
    n.backward = [](Graph& g, const Node& self) {
        if (!g.node(self.inputs[0]).requires_grad) return;
        ops::global_avg_pool_backward(self.grad, g.value_of(self.inputs[0]).shape(),
                                      g.grad_buffer(self.inputs[0]));
    };
    return make_node(std::move(n));
}

Var Graph::block_avg_pool(Var x, int p) {
    Node n;
    n.op = "block_avg_pool";
    n.inputs = {x.id_};
    n.value = ops::block_avg_pool(x.value(), p);
    n.requires_grad = any_requires(n.inputs);
    n.replay = [ix = x.id_, p](const Graph& g) { return ops::block_avg_pool(g.value_of(ix), p); };
    n.backward = [p](Graph& g, const Node& self) {
        if (!g.node(self.inputs[0]).requires_grad) return;
        ops::block_avg_pool_backward(self.grad, g.value_of(self.inputs[0]).shape(), p,
                                     g.grad_buffer(self.inputs[0]));
    };
    return make_node(std::move(n));
}

Var Graph::reshape(Var x, std::vector<int> shape) {
    Node n;
    n.op = "reshape";
    n.inputs = {x.id_};
    n.value = x.value().reshaped(shape);
    n.requires_grad = any_requires(n.inputs);
    n.replay = [ix = x.id_, shape](const Graph& g) { return g.value_of(ix).reshaped(shape); };
    n.backward = [](Graph& g, const Node& self) {
        if (!g.node(self.inputs[0]).requires_grad) return;
        Tensor& dst = g.grad_buffer(self.inputs[0]);
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += self.grad[i];
    };
    return make_node(std::move(n));
}

Var Graph::add_row_bias(Var x, Var bias) {
    Node n;
    n.op = "add_row_bias";
    n.inputs = {x.id_, bias.id_};
    n.value = ops::add_row_bias(x.value(), bias.value());
    n.requires_grad = any_requires(n.inputs);
    n.replay = [ix = x.id_, ib = bias.id_](const Graph& g) {
        return ops::add_row_bias(g.value_of(ix), g.value_of(ib));
    };
    n.backward = [](Graph& g, const Node& self) {
        if (g.node(self.inputs[0]).requires_grad) g.accumulate_grad(self.inputs[0], self.grad);
        if (g.node(self.inputs[1]).requires_grad) {
            Tensor& dst = g.grad_buffer(self.inputs[1]);
            const int rows = self.grad.dim(0), cols = self.grad.dim(1);
            for (int i = 0; i < rows; ++i)
                for (int j = 0; j < cols; ++j)
                    dst[static_cast<std::size_t>(j)] += self.grad[static_cast<std::size_t>(i) * cols + j];
        }
    };
    return make_node(std::move(n));
}

Var Graph::select(Var x, int index) {
    const Tensor& v = x.value();
    if (v.rank() < 2) throw ShapeMismatchError("select: rank must be >= 2");
    if (index < 0 || index >= v.dim(0)) throw ShapeMismatchError("select: index out of range");
    std::vector<int> out_shape(v.shape().begin() + 1, v.shape().end());
    std::size_t chunk = 1;
    for (int d : out_shape) chunk *= static_cast<std::size_t>(d);

    Node n;
    n.op = "select";
    n.inputs = {x.id_};
    std::vector<double> data(v.data() + index * chunk, v.data() + (index + 1) * chunk);
    n.value = Tensor(out_shape, std::move(data));
    n.requires_grad = any_requires(n.inputs);
    n.replay = [ix = x.id_, index, out_shape, chunk](const Graph& g) {
        const Tensor& src = g.value_of(ix);
        std::vector<double> d(src.data() + index * chunk, src.data() + (index + 1) * chunk);
        return Tensor(out_shape, std::move(d));
    };
    n.backward = [index, chunk](Graph& g, const Node& self) {
        if (!g.node(self.inputs[0]).requires_grad) return;
        Tensor& dst = g.grad_buffer(self.inputs[0]);
        double* base = dst.data() + index * chunk;
        for (std::size_t i = 0; i < chunk; ++i) base[i] += self.grad[i];
    };
    return make_node(std::move(n));
}

Var Graph::stack(std::span<const Var> parts) {
    if (parts.empty()) throw ShapeMismatchError("stack: empty input");
    const std::vector<int>& part_shape = parts[0].value().shape();
    std::size_t chunk = parts[0].value().size();
    std::vector<int> ids;
    ids.reserve(parts.size());
    for (const Var& p : parts) {
        if (p.value().shape() != part_shape) throw ShapeMismatchError("stack: ragged shapes");
        ids.push_back(p.id_);
    }
    std::vector<int> out_shape;
    out_shape.push_back(static_cast<int>(parts.size()));
    out_shape.insert(out_shape.end(), part_shape.begin(), part_shape.end());

    Node n;
    n.op = "stack";
    n.inputs = ids;
    Tensor value(out_shape);
    for (std::size_t p = 0; p < parts.size(); ++p)
        std::copy_n(parts[p].value().data(), chunk, value.data() + p * chunk);
    n.value = std::move(value);
    n.requires_grad = any_requires(n.inputs);
    n.replay = [ids, out_shape, chunk](const Graph& g) {
        Tensor v(out_shape);
        for (std::size_t p = 0; p < ids.size(); ++p)
            std::copy_n(g.value_of(ids[p]).data(), chunk, v.data() + p * chunk);
        return v;
    };
    n.backward = [chunk](Graph& g, const Node& self) {
        for (std::size_t p = 0; p < self.inputs.size(); ++p) {
            if (!g.node(self.inputs[p]).requires_grad) continue;
            Tensor& dst = g.grad_buffer(self.inputs[p]);
            const double* src = self.grad.data() + p * chunk;
            for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
        }
    };
    return make_node(std::move(n));
}

Var Graph::sum(Var x) {
    Node n;
    n.op = "sum";
    n.inputs = {x.id_};
    n.value = Tensor::scalar(ops::sum(x.value()));
    n.requires_grad = any_requires(n.inputs);
    n.replay = [ix = x.id_](const Graph& g) { return Tensor::scalar(ops::sum(g.value_of(ix))); };
    n.backward = [](Graph& g, const Node& self) {
        if (!g.node(self.inputs[0]).requires_grad) return;
        Tensor& dst = g.grad_buffer(self.inputs[0]);
        const double gv = self.grad[0];
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += gv;
    };
    return make_node(std::move(n));
}

Var Graph::l2_norm(Var x) {
    Node n;
    n.op = "l2_norm";
    n.inputs = {x.id_};
    n.value = Tensor::scalar(ops::l2_norm(x.value()));
    n.requires_grad = any_requires(n.inputs);
    n.replay = [ix = x.id_](const Graph& g) {
        return Tensor::scalar(ops::l2_norm(g.value_of(ix)));
    };
    n.backward = [](Graph& g, const Node& self) {
        if (!g.node(self.inputs[0]).requires_grad) return;
        const double norm = self.value[0];
        if (norm == 0.0) return;
        const Tensor& vx = g.value_of(self.inputs[0]);
        Tensor& dst = g.grad_buffer(self.inputs[0]);
        const double g0 = self.grad[0] / norm;
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g0 * vx[i];
    };
    return make_node(std::move(n));
}

Var Graph::softmax_cross_entropy(Var logits, std::vector<int> labels) {
    Node n;
    n.op = "softmax_cross_entropy";
    n.inputs = {logits.id_};
    Tensor probs;
    n.value = Tensor::scalar(ops::cross_entropy_mean(logits.value(), labels, &probs));
    n.requires_grad = any_requires(n.inputs);
    n.labels = std::move(labels);
    n.saved.push_back(std::move(probs));
    n.replay = [il = logits.id_, labels = n.labels](const Graph& g) {
        return Tensor::scalar(ops::cross_entropy_mean(g.value_of(il), labels, nullptr));
    };
    n.backward = [](Graph& g, const Node& self) {
        if (!g.node(self.inputs[0]).requires_grad) return;
        ops::cross_entropy_backward(self.saved[0], self.labels, self.grad[0],
                                    g.grad_buffer(self.inputs[0]));
    };
    return make_node(std::move(n));
}

Var Graph::kl_div_softmax(Var p_logits, Var q_logits) {
    Node n;
    n.op = "kl_div_softmax";
    n.inputs = {p_logits.id_, q_logits.id_};
    Tensor p, q, row_kl;
    n.value = Tensor::scalar(
        ops::kl_div_softmax_mean(p_logits.value(), q_logits.value(), &p, &q, &row_kl));
    n.requires_grad = any_requires(n.inputs);
    n.saved.push_back(std::move(p));
    n.saved.push_back(std::move(q));
    n.saved.push_back(std::move(row_kl));
    n.replay = [ip = p_logits.id_, iq = q_logits.id_](const Graph& g) {
        return Tensor::scalar(
            ops::kl_div_softmax_mean(g.value_of(ip), g.value_of(iq), nullptr, nullptr, nullptr));
    };
    n.backward = [](Graph& g, const Node& self) {
        const bool need_p = g.node(self.inputs[0]).requires_grad;
        const bool need_q = g.node(self.inputs[1]).requires_grad;
        if (!need_p && !need_q) return;
        Tensor scratch_p(self.saved[0].shape());
        Tensor scratch_q(self.saved[1].shape());
        Tensor& gp = need_p ? g.grad_buffer(self.inputs[0]) : scratch_p;
        Tensor& gq = need_q ? g.grad_buffer(self.inputs[1]) : scratch_q;
        ops::kl_div_softmax_backward(self.saved[0], self.saved[1], self.saved[2], self.grad[0],
                                     gp, gq);
    };
    return make_node(std::move(n));
}

Var Graph::cw_margin(Var logits, std::vector<int> labels) {
    Node n;
    n.op = "cw_margin";
    n.inputs = {logits.id_};
    std::vector<int> argmax_other;
    n.value = Tensor::scalar(ops::cw_margin_mean(logits.value(), labels, &argmax_other));
    n.requires_grad = any_requires(n.inputs);
    const int num_classes = logits.value().dim(1);
    n.labels = std::move(labels);
    // argmax_other rides along in labels storage after the true labels
    n.labels.insert(n.labels.end(), argmax_other.begin(), argmax_other.end());
    n.replay = [il = logits.id_,
                labels = std::vector<int>(n.labels.begin(),
                                          n.labels.begin() + static_cast<long>(n.labels.size() / 2))](
                   const Graph& g) {
        return Tensor::scalar(ops::cw_margin_mean(g.value_of(il), labels, nullptr));
    };
    n.backward = [num_classes](Graph& g, const Node& self) {
        if (!g.node(self.inputs[0]).requires_grad) return;
        const std::size_t half = self.labels.size() / 2;
        std::span<const int> y(self.labels.data(), half);
        std::span<const int> other(self.labels.data() + half, half);
        ops::cw_margin_backward(y, other, num_classes, self.grad[0],
                                g.grad_buffer(self.inputs[0]));
    };
    return make_node(std::move(n));
}

void Graph::backward(Var loss) {
    if (loss.g_ != this) throw NotScalarError("backward: loss from a different graph");
    const Node& ln = node(loss.id_);
    if (ln.value.size() != 1) throw NotScalarError("backward: loss is not a scalar");
    grad_buffer(loss.id_)[0] += 1.0;
    for (int id = loss.id_; id >= 0; --id) {
        Node& n = node(id);
        if (!n.requires_grad || !n.grad_allocated || !n.backward) continue;
        n.backward(*this, n);
    }
}

bool Graph::replay_matches() const {
    for (const Node& n : nodes_) {
        if (!n.replay) continue;
        Tensor recomputed = n.replay(*this);
        if (!recomputed.bit_equal(n.value)) return false;
    }
    return true;
}

}  // namespace fmrgc
