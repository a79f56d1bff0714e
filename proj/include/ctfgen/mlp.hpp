#pragma once

// Feed-forward networks: linear -> PReLU hidden blocks, linear head without
// activation, one trainable PReLU slope per layer. With use_skip, every hidden
// block after the first projection to hidden_dim adds its input back to its
// output (additive residual); the projection layer itself has no residual.
//
// Weight init is uniform Kaiming-style fan-in scaling adapted to PReLU:
// W ~ U(-L, L) with L = sqrt(6 / ((1 + a^2) * fan_in)), biases zero.

#include "ctfgen/autodiff.hpp"
#include "ctfgen/rng.hpp"
#include "ctfgen/tensor.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace ctfgen {

struct ParamRef {
    Tensor* tensor = nullptr;
    std::string name;
    bool decay = true;  // weight matrices only; biases and PReLU slopes are exempt
};

struct MlpConfig {
    std::size_t input_dim = 0;
    std::size_t hidden_dim = 128;
    std::size_t num_hidden = 0;
    std::size_t output_dim = 0;
    double prelu_init = 0.25;
    bool use_skip = false;

    void validate() const {
        if (input_dim == 0 || output_dim == 0) throw std::invalid_argument("MlpConfig: zero input/output dim");
        if (num_hidden > 0 && hidden_dim == 0) throw std::invalid_argument("MlpConfig: hidden_dim must be > 0");
        if (!(prelu_init > 0.0 && prelu_init < 1.0)) {
            throw std::invalid_argument("MlpConfig: prelu_init must lie in (0, 1)");
        }
    }
};

class Mlp {
public:
    struct Layer {
        Tensor w;      // fan_in x fan_out
        Tensor b;      // fan_out
        Tensor slope;  // 1-element PReLU parameter; unused on the output layer
        bool activated = true;
    };

    Mlp() = default;

    static Mlp init(const MlpConfig& cfg, Rng& rng, std::string name) {
        cfg.validate();
        Mlp net;
        net.cfg_ = cfg;
        net.name_ = std::move(name);
        std::size_t fan_in = cfg.input_dim;
        for (std::size_t k = 0; k < cfg.num_hidden; ++k) {
            net.layers_.push_back(make_layer(fan_in, cfg.hidden_dim, cfg.prelu_init, &rng));
            fan_in = cfg.hidden_dim;
        }
        Layer head = make_layer(fan_in, cfg.output_dim, cfg.prelu_init, &rng);
        head.activated = false;
        net.layers_.push_back(std::move(head));
        return net;
    }

    // All-zero weights and slopes; handy for tests and as an explicit null model.
    static Mlp zeros(const MlpConfig& cfg, std::string name) {
        cfg.validate();
        Mlp net;
        net.cfg_ = cfg;
        net.name_ = std::move(name);
        std::size_t fan_in = cfg.input_dim;
        for (std::size_t k = 0; k < cfg.num_hidden; ++k) {
            net.layers_.push_back(make_layer(fan_in, cfg.hidden_dim, 0.0, nullptr));
            fan_in = cfg.hidden_dim;
        }
        Layer head = make_layer(fan_in, cfg.output_dim, 0.0, nullptr);
        head.activated = false;
        net.layers_.push_back(std::move(head));
        return net;
    }

    const MlpConfig& config() const { return cfg_; }
    const std::string& name() const { return name_; }
    std::vector<Layer>& layers() { return layers_; }
    const std::vector<Layer>& layers() const { return layers_; }

    std::vector<ParamRef> params() {
        std::vector<ParamRef> out;
        for (std::size_t k = 0; k < layers_.size(); ++k) {
            const std::string base = name_ + ".layer" + std::to_string(k);
            out.push_back({&layers_[k].w, base + ".w", true});
            out.push_back({&layers_[k].b, base + ".b", false});
            if (layers_[k].activated) out.push_back({&layers_[k].slope, base + ".prelu", false});
        }
        return out;
    }

    // input: rows x input_dim. Plain value path; bit-identical to the tape path
    // because both run the same tensor kernels in the same order.
    Tensor forward(const Tensor& input) const {
        check_input(input);
        Tensor h = input;
        for (std::size_t k = 0; k < layers_.size(); ++k) {
            const Layer& layer = layers_[k];
            Tensor z = add_rowvec(matmul(h, layer.w), layer.b);
            if (!layer.activated) return z;
            Tensor a = ctfgen::prelu(z, layer.slope[0]);
            h = (cfg_.use_skip && k > 0) ? ctfgen::add(h, a) : std::move(a);
        }
        return h;  // unreachable: the head always returns
    }

    struct Binding {
        std::vector<Var> vars;  // aligned with params() order
    };

    Binding bind(Tape& tape) {
        Binding b;
        for (const ParamRef& p : params()) b.vars.push_back(tape.leaf(*p.tensor, p.name));
        return b;
    }

    Var forward(Tape& tape, const Binding& bound, Var input) const {
        check_input(tape.value(input));
        Var h = input;
        std::size_t cursor = 0;
        for (std::size_t k = 0; k < layers_.size(); ++k) {
            const Layer& layer = layers_[k];
            const Var w = bound.vars.at(cursor++);
            const Var b = bound.vars.at(cursor++);
            Var z = tape.add_rowvec(tape.matmul(h, w), b);
            if (!layer.activated) return z;
            const Var slope = bound.vars.at(cursor++);
            Var a = tape.prelu(z, slope);
            h = (cfg_.use_skip && k > 0) ? tape.add(h, a) : a;
        }
        return h;
    }

private:
    static Layer make_layer(std::size_t fan_in, std::size_t fan_out, double prelu_init, Rng* rng) {
        Layer layer;
        layer.w = Tensor({fan_in, fan_out});
        layer.b = Tensor({fan_out});
        layer.slope = Tensor::scalar(prelu_init);
        if (rng != nullptr) {
            const double limit = std::sqrt(6.0 / ((1.0 + prelu_init * prelu_init) * static_cast<double>(fan_in)));
            for (std::size_t i = 0; i < layer.w.size(); ++i) layer.w[i] = rng->uniform(-limit, limit);
        }
        return layer;
    }

    void check_input(const Tensor& input) const {
        if (input.ndim() != 2 || input.cols() != cfg_.input_dim) {
            throw std::invalid_argument("Mlp::forward(" + name_ + "): expected rows x " +
                                        std::to_string(cfg_.input_dim) + " input, got " + input.shape_str());
        }
    }

    MlpConfig cfg_;
    std::string name_;
    std::vector<Layer> layers_;
};

}  // namespace ctfgen
