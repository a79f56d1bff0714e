#pragma once

// Reverse-mode automatic differentiation over Tensors. A Tape is an arena of
// nodes created in topological order (inputs always precede consumers), so
// backward is a single reverse sweep. Gradients accumulate; backward may run
// once per tape (a second call throws — rebuild the graph instead).
//
// Granularity is one node per tensor op (a whole matmul, a whole activation),
// not per scalar. Losses with dense pairwise structure (kernel sums, optimal
// transport) enter through custom() with a hand-written backward.

#include "ctfgen/tensor.hpp"

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace ctfgen {

struct Var {
    std::int32_t id = -1;
    bool valid() const { return id >= 0; }
};

class Tape {
public:
    using CustomBackward = std::function<void(const Tensor& out_grad,
                                              const std::vector<const Tensor*>& in_values,
                                              const std::vector<Tensor*>& in_grads)>;

    Var leaf(const Tensor& value, std::string name = {}) {
        return push(value, {}, nullptr, /*is_leaf=*/true, std::move(name));
    }

    Var constant(Tensor value) { return push(std::move(value), {}, nullptr, /*is_leaf=*/false); }

    const Tensor& value(Var v) const { return node(v).value; }

    // Defined after backward(); zero for parameters the loss never reached.
    const Tensor& grad(Var v) const {
        if (!backward_done_) throw std::logic_error("Tape::grad: backward has not run");
        const Node& n = node(v);
        if (n.grad.size() == 0) {
            const_cast<Node&>(n).grad = Tensor::zeros(n.value.shape());
        }
        return n.grad;
    }

    const std::string& name(Var v) const { return node(v).name; }
    std::size_t num_nodes() const { return nodes_.size(); }

    void backward(Var loss) {
        if (backward_done_) throw std::logic_error("Tape::backward: called twice without clear()");
        Node& top = node(loss);
        if (top.value.size() != 1) {
            throw std::invalid_argument("Tape::backward: loss must be scalar, got shape " + top.value.shape_str());
        }
        backward_done_ = true;
        if (!top.needs_grad) return;
        top.grad = Tensor::full(top.value.shape(), 1.0);
        for (std::int32_t id = loss.id; id >= 0; --id) {
            Node& n = nodes_[static_cast<std::size_t>(id)];
            if (n.grad.size() == 0 || !n.backward) continue;
            n.backward(*this, id);
        }
    }

    void clear() {
        nodes_.clear();
        backward_done_ = false;
    }

    // --- elementwise / structural ops -------------------------------------

    Var add(Var a, Var b) {
        check_same_shape(a, b, "add");
        return push(ctfgen::add(value(a), value(b)), {a.id, b.id}, [](Tape& t, std::int32_t self) {
            const Tensor& g = t.nodes_[self].grad;
            t.accumulate(t.input(self, 0), g);
            t.accumulate(t.input(self, 1), g);
        });
    }

    Var sub(Var a, Var b) {
        check_same_shape(a, b, "sub");
        return push(ctfgen::sub(value(a), value(b)), {a.id, b.id}, [](Tape& t, std::int32_t self) {
            const Tensor& g = t.nodes_[self].grad;
            t.accumulate(t.input(self, 0), g);
            t.accumulate_scaled(t.input(self, 1), g, -1.0);
        });
    }

    Var mul(Var a, Var b) {
        check_same_shape(a, b, "mul");
        return push(ctfgen::mul(value(a), value(b)), {a.id, b.id}, [](Tape& t, std::int32_t self) {
            const Tensor& g = t.nodes_[self].grad;
            t.accumulate_product(t.input(self, 0), g, t.value_of(self, 1));
            t.accumulate_product(t.input(self, 1), g, t.value_of(self, 0));
        });
    }

    Var scale(Var a, double s) {
        return push(ctfgen::scale(value(a), s), {a.id}, [s](Tape& t, std::int32_t self) {
            t.accumulate_scaled(t.input(self, 0), t.nodes_[self].grad, s);
        });
    }

    Var square(Var a) {
        Tensor out = value(a);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] *= out[i];
        return push(std::move(out), {a.id}, [](Tape& t, std::int32_t self) {
            const Tensor& g = t.nodes_[self].grad;
            const Tensor& x = t.value_of(self, 0);
            Tensor* gx = t.grad_buf(t.input(self, 0));
            if (!gx) return;
            for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += 2.0 * x[i] * g[i];
        });
    }

    Var sum_all(Var a) {
        return push(Tensor::scalar(ctfgen::sum(value(a))), {a.id}, [](Tape& t, std::int32_t self) {
            const double g = t.nodes_[self].grad[0];
            Tensor* gx = t.grad_buf(t.input(self, 0));
            if (!gx) return;
            for (std::size_t i = 0; i < gx->size(); ++i) (*gx)[i] += g;
        });
    }

    Var mean_all(Var a) {
        const double n = static_cast<double>(value(a).size());
        return scale(sum_all(a), 1.0 / n);
    }

    // --- matrix ops ---------------------------------------------------------

    Var matmul(Var a, Var b) {
        return push(ctfgen::matmul(value(a), value(b)), {a.id, b.id}, [](Tape& t, std::int32_t self) {
            const Tensor& g = t.nodes_[self].grad;
            if (Tensor* ga = t.grad_buf(t.input(self, 0))) matmul_acc_abT(*ga, g, t.value_of(self, 1));
            if (Tensor* gb = t.grad_buf(t.input(self, 1))) matmul_acc_aTb(*gb, t.value_of(self, 0), g);
        });
    }

    Var add_rowvec(Var m, Var v) {
        return push(ctfgen::add_rowvec(value(m), value(v)), {m.id, v.id}, [](Tape& t, std::int32_t self) {
            const Tensor& g = t.nodes_[self].grad;
            t.accumulate(t.input(self, 0), g);
            if (Tensor* gv = t.grad_buf(t.input(self, 1))) {
                const std::size_t rows = g.rows(), cols = g.cols();
                for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t k = 0; k < cols; ++k) (*gv)[k] += g.at(r, k);
                }
            }
        });
    }

    Var mul_rowvec(Var m, Var v) {
        return push(ctfgen::mul_rowvec(value(m), value(v)), {m.id, v.id}, [](Tape& t, std::int32_t self) {
            const Tensor& g = t.nodes_[self].grad;
            const Tensor& mv = t.value_of(self, 0);
            const Tensor& vv = t.value_of(self, 1);
            const std::size_t rows = g.rows(), cols = g.cols();
            if (Tensor* gm = t.grad_buf(t.input(self, 0))) {
                for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t k = 0; k < cols; ++k) gm->at(r, k) += g.at(r, k) * vv[k];
                }
            }
            if (Tensor* gv = t.grad_buf(t.input(self, 1))) {
                for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t k = 0; k < cols; ++k) (*gv)[k] += g.at(r, k) * mv.at(r, k);
                }
            }
        });
    }

    // PReLU with one trainable slope per layer (slope is a 1-element tensor).
    // Forward and the x-gradient use the x >= 0 branch at exactly 0.
    Var prelu(Var x, Var slope) {
        if (value(slope).size() != 1) throw std::invalid_argument("prelu: slope must be a single scalar");
        const double a = value(slope)[0];
        return push(ctfgen::prelu(value(x), a), {x.id, slope.id}, [](Tape& t, std::int32_t self) {
            const Tensor& g = t.nodes_[self].grad;
            const Tensor& x = t.value_of(self, 0);
            const double a = t.value_of(self, 1)[0];
            if (Tensor* gx = t.grad_buf(t.input(self, 0))) {
                for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * (x[i] >= 0.0 ? 1.0 : a);
            }
            if (Tensor* ga = t.grad_buf(t.input(self, 1))) {
                double acc = 0.0;
                for (std::size_t i = 0; i < g.size(); ++i) {
                    if (x[i] < 0.0) acc += g[i] * x[i];
                }
                (*ga)[0] += acc;
            }
        });
    }

    Var concat_cols(const std::vector<Var>& parts) {
        std::vector<const Tensor*> vals;
        std::vector<std::int32_t> ids;
        vals.reserve(parts.size());
        for (Var p : parts) {
            vals.push_back(&value(p));
            ids.push_back(p.id);
        }
        return push(ctfgen::concat_cols(vals), ids, [](Tape& t, std::int32_t self) {
            const Tensor& g = t.nodes_[self].grad;
            const std::size_t rows = g.rows();
            std::size_t off = 0;
            for (std::size_t k = 0; k < t.nodes_[self].inputs.size(); ++k) {
                const std::size_t w = t.value_of(self, k).cols();
                if (Tensor* gp = t.grad_buf(t.input(self, k))) {
                    for (std::size_t r = 0; r < rows; ++r) {
                        for (std::size_t c = 0; c < w; ++c) gp->at(r, c) += g.at(r, off + c);
                    }
                }
                off += w;
            }
        });
    }

    Var slice_cols(Var a, std::size_t begin, std::size_t end) {
        return push(ctfgen::slice_cols(value(a), begin, end), {a.id},
                    [begin, end](Tape& t, std::int32_t self) {
                        const Tensor& g = t.nodes_[self].grad;
                        if (Tensor* ga = t.grad_buf(t.input(self, 0))) {
                            for (std::size_t r = 0; r < g.rows(); ++r) {
                                for (std::size_t c = begin; c < end; ++c) ga->at(r, c) += g.at(r, c - begin);
                            }
                        }
                    });
    }

    // Escape hatch for fused ops (kernel losses, transport costs). in_grads
    // entries are nullptr for inputs that do not require gradient.
    Var custom(const std::vector<Var>& inputs, Tensor value, CustomBackward bw) {
        std::vector<std::int32_t> ids;
        ids.reserve(inputs.size());
        for (Var v : inputs) ids.push_back(v.id);
        return push(std::move(value), ids, [bw = std::move(bw)](Tape& t, std::int32_t self) {
            const std::size_t k = t.nodes_[self].inputs.size();
            std::vector<const Tensor*> vals(k);
            std::vector<Tensor*> grads(k);
            for (std::size_t i = 0; i < k; ++i) {
                vals[i] = &t.value_of(self, i);
                grads[i] = t.grad_buf(t.input(self, i));
            }
            bw(t.nodes_[self].grad, vals, grads);
        });
    }

private:
    using BackwardFn = std::function<void(Tape&, std::int32_t)>;

    struct Node {
        Tensor value;
        Tensor grad;
        std::vector<std::int32_t> inputs;
        BackwardFn backward;
        bool needs_grad = false;
        bool is_leaf = false;
        std::string name;
    };

    Node& node(Var v) {
        if (!v.valid() || static_cast<std::size_t>(v.id) >= nodes_.size()) {
            throw std::invalid_argument("Tape: invalid Var");
        }
        return nodes_[static_cast<std::size_t>(v.id)];
    }
    const Node& node(Var v) const { return const_cast<Tape*>(this)->node(v); }

    Var push(Tensor value, std::vector<std::int32_t> inputs, BackwardFn fn, bool is_leaf = false,
             std::string name = {}) {
        Node n;
        n.value = std::move(value);
        n.inputs = std::move(inputs);
        n.is_leaf = is_leaf;
        n.name = std::move(name);
        n.needs_grad = is_leaf;
        for (std::int32_t in : n.inputs) {
            if (nodes_[static_cast<std::size_t>(in)].needs_grad) n.needs_grad = true;
        }
        if (n.needs_grad && !is_leaf) n.backward = std::move(fn);
        nodes_.push_back(std::move(n));
        return Var{static_cast<std::int32_t>(nodes_.size() - 1)};
    }

    std::int32_t input(std::int32_t self, std::size_t k) const {
        return nodes_[static_cast<std::size_t>(self)].inputs[k];
    }
    const Tensor& value_of(std::int32_t self, std::size_t k) const {
        return nodes_[static_cast<std::size_t>(input(self, k))].value;
    }

    // nullptr when the input does not participate in differentiation.
    Tensor* grad_buf(std::int32_t id) {
        Node& n = nodes_[static_cast<std::size_t>(id)];
        if (!n.needs_grad) return nullptr;
        if (n.grad.size() == 0) n.grad = Tensor::zeros(n.value.shape());
        return &n.grad;
    }

    void accumulate(std::int32_t id, const Tensor& g) {
        if (Tensor* buf = grad_buf(id)) {
            for (std::size_t i = 0; i < g.size(); ++i) (*buf)[i] += g[i];
        }
    }
    void accumulate_scaled(std::int32_t id, const Tensor& g, double s) {
        if (Tensor* buf = grad_buf(id)) {
            for (std::size_t i = 0; i < g.size(); ++i) (*buf)[i] += s * g[i];
        }
    }
    void accumulate_product(std::int32_t id, const Tensor& g, const Tensor& other) {
        if (Tensor* buf = grad_buf(id)) {
            for (std::size_t i = 0; i < g.size(); ++i) (*buf)[i] += g[i] * other[i];
        }
    }

    void check_same_shape(Var a, Var b, const char* op) const {
        if (!value(a).same_shape(value(b))) {
            throw std::invalid_argument(std::string(op) + ": shape mismatch " + value(a).shape_str() + " vs " +
                                        value(b).shape_str());
        }
    }

    std::vector<Node> nodes_;
    bool backward_done_ = false;
};

inline double prelu(double x, double a) { return x >= 0.0 ? x : a * x; }

}  // namespace ctfgen
