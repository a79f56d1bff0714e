#pragma once

// Adam and AdamW with bias correction, plus the warmup-cosine learning-rate
// schedule. AdamW applies decoupled weight decay to decay-eligible parameters
// (weight matrices); Adam folds any nonzero decay into the gradient (classic
// L2). A NaN or infinite gradient aborts the step naming the parameter.

#include "ctfgen/mlp.hpp"
#include "ctfgen/tensor.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

namespace ctfgen {

enum class OptAlgo { adam, adamw };

struct OptimizerConfig {
    OptAlgo algo = OptAlgo::adamw;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

class Optimizer {
public:
    Optimizer(OptimizerConfig cfg, const std::vector<ParamRef>& params) : cfg_(cfg) {
        m_.reserve(params.size());
        v_.reserve(params.size());
        for (const ParamRef& p : params) {
            m_.push_back(Tensor::zeros(p.tensor->shape()));
            v_.push_back(Tensor::zeros(p.tensor->shape()));
        }
    }

    void set_lr(double lr) { cfg_.lr = lr; }
    double lr() const { return cfg_.lr; }
    long step_count() const { return step_; }
    const OptimizerConfig& config() const { return cfg_; }

    void step(const std::vector<ParamRef>& params, const std::vector<Tensor>& grads) {
        if (params.size() != m_.size() || grads.size() != m_.size()) {
            throw std::invalid_argument("Optimizer::step: parameter/gradient count mismatch");
        }
        ++step_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
        for (std::size_t i = 0; i < params.size(); ++i) {
            Tensor& p = *params[i].tensor;
            const Tensor& g = grads[i];
            if (!p.same_shape(g)) {
                throw std::invalid_argument("Optimizer::step: gradient shape mismatch for " + params[i].name);
            }
            if (!g.all_finite()) {
                throw std::runtime_error("Optimizer::step: non-finite gradient for parameter " + params[i].name);
            }
            Tensor& m = m_[i];
            Tensor& v = v_[i];
            const bool l2_into_grad = cfg_.algo == OptAlgo::adam && cfg_.weight_decay != 0.0 && params[i].decay;
            if (cfg_.algo == OptAlgo::adamw && cfg_.weight_decay != 0.0 && params[i].decay) {
                for (std::size_t k = 0; k < p.size(); ++k) p[k] -= cfg_.lr * cfg_.weight_decay * p[k];
            }
            for (std::size_t k = 0; k < p.size(); ++k) {
                const double gk = l2_into_grad ? g[k] + cfg_.weight_decay * p[k] : g[k];
                m[k] = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * gk;
                v[k] = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * gk * gk;
                const double mhat = m[k] / bc1;
                const double vhat = v[k] / bc2;
                p[k] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
            }
        }
    }

private:
    OptimizerConfig cfg_;
    long step_ = 0;
    std::vector<Tensor> m_;
    std::vector<Tensor> v_;
};

// Linear warmup to base_lr over warmup_steps, then cosine decay to 0 at
// total_steps. Continuous at the warmup boundary.
struct LrSchedule {
    double base_lr = 1e-3;
    long warmup_steps = 0;
    long total_steps = 0;

    void validate() const {
        if (warmup_steps < 0 || warmup_steps > total_steps) {
            throw std::invalid_argument("LrSchedule: need 0 <= warmup_steps <= total_steps");
        }
    }
};

inline double lr_at(const LrSchedule& sched, long step) {
    sched.validate();
    if (step < 0 || step > sched.total_steps) {
        throw std::invalid_argument("lr_at: step " + std::to_string(step) + " outside [0, " +
                                    std::to_string(sched.total_steps) + "]");
    }
    if (sched.warmup_steps > 0 && step <= sched.warmup_steps) {
        return sched.base_lr * static_cast<double>(step) / static_cast<double>(sched.warmup_steps);
    }
    if (sched.total_steps == sched.warmup_steps) return sched.base_lr;
    const double t = static_cast<double>(step - sched.warmup_steps) /
                     static_cast<double>(sched.total_steps - sched.warmup_steps);
    return sched.base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

}  // namespace ctfgen
