#pragma once

// The trainable joint NCM: two mechanism networks (source/target) and four
// exogenous pushforward generators (context and noise per domain), plus the
// stage-1 losses. A mechanism consumes concat(x, c, n) of width 3d and emits a
// 2d effect. Networks operate in per-domain standardized effect coordinates;
// the standardizer is part of the model (identity until fitted to data) and
// raw-space outputs are recovered by the inverse affine. Kernel losses compare
// standardized generator output against standardized data, which is the same
// kernel least-squares objective in affinely rescaled coordinates.

#include "ctfgen/autodiff.hpp"
#include "ctfgen/mlp.hpp"
#include "ctfgen/mmd.hpp"
#include "ctfgen/rng.hpp"
#include "ctfgen/scm_oracle.hpp"
#include "ctfgen/sinkhorn.hpp"
#include "ctfgen/tensor.hpp"

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace ctfgen {

struct Standardizer {
    Tensor mean;    // dim
    Tensor stddev;  // dim, strictly positive

    static Standardizer identity(std::size_t dim) {
        return Standardizer{Tensor::zeros({dim}), Tensor::full({dim}, 1.0)};
    }

    static Standardizer fit(const Tensor& rows) {
        const std::size_t n = rows.rows(), k = rows.cols();
        Standardizer s{Tensor::zeros({k}), Tensor::zeros({k})};
        for (std::size_t c = 0; c < k; ++c) {
            double m = 0.0;
            for (std::size_t r = 0; r < n; ++r) m += rows.at(r, c);
            m /= double(n);
            double v = 0.0;
            for (std::size_t r = 0; r < n; ++r) {
                const double d = rows.at(r, c) - m;
                v += d * d;
            }
            s.mean[c] = m;
            s.stddev[c] = std::max(std::sqrt(v / double(n)), 1e-8);
        }
        return s;
    }

    bool is_identity() const {
        for (std::size_t i = 0; i < mean.size(); ++i) {
            if (mean[i] != 0.0 || stddev[i] != 1.0) return false;
        }
        return true;
    }

    Tensor apply(const Tensor& rows) const {
        Tensor out = rows;
        for (std::size_t r = 0; r < rows.rows(); ++r) {
            for (std::size_t c = 0; c < rows.cols(); ++c) out.at(r, c) = (out.at(r, c) - mean[c]) / stddev[c];
        }
        return out;
    }

    Tensor invert(const Tensor& rows) const {
        Tensor out = rows;
        for (std::size_t r = 0; r < rows.rows(); ++r) {
            for (std::size_t c = 0; c < rows.cols(); ++c) out.at(r, c) = out.at(r, c) * stddev[c] + mean[c];
        }
        return out;
    }

    Var invert(Tape& tape, Var rows) const {
        if (is_identity()) return rows;
        return tape.add_rowvec(tape.mul_rowvec(rows, tape.constant(stddev)), tape.constant(mean));
    }
};

struct ExogenousDraw {
    Tensor eta_c;  // d, N(0, I)
    Tensor eta_n;  // d, N(0, I)
};

inline Tensor normal_rows(std::size_t rows, std::size_t cols, Rng& rng) {
    Tensor t({rows, cols});
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.normal();
    return t;
}

inline Tensor repeat_rows(const Tensor& rows, std::size_t q) {
    const std::size_t n = rows.rows(), k = rows.cols();
    Tensor out({n * q, k});
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < q; ++j) {
            for (std::size_t c = 0; c < k; ++c) out.at(i * q + j, c) = rows.at(i, c);
        }
    }
    return out;
}

struct NcmBundle {
    std::size_t d = 0;
    Mlp mech_source, mech_target;
    Mlp ctx_gen_source, ctx_gen_target;
    Mlp noise_gen_source, noise_gen_target;
    Standardizer y_std_source, y_std_target;

    // Symmetric architectures across domains; mechanisms 5 hidden layers with
    // PReLU 0.25, context generators 1 hidden with skip, noise generators 3
    // hidden with skip, both at PReLU 0.01.
    static NcmBundle init(std::size_t d, Rng& rng, std::size_t hidden = 128) {
        NcmBundle b = shell(d, hidden);
        b.mech_source = Mlp::init(b.mech_source.config(), rng, "mech_source");
        b.mech_target = Mlp::init(b.mech_target.config(), rng, "mech_target");
        b.ctx_gen_source = Mlp::init(b.ctx_gen_source.config(), rng, "ctx_gen_source");
        b.ctx_gen_target = Mlp::init(b.ctx_gen_target.config(), rng, "ctx_gen_target");
        b.noise_gen_source = Mlp::init(b.noise_gen_source.config(), rng, "noise_gen_source");
        b.noise_gen_target = Mlp::init(b.noise_gen_target.config(), rng, "noise_gen_target");
        return b;
    }

    static NcmBundle zeros(std::size_t d, std::size_t hidden = 8) {
        NcmBundle b = shell(d, hidden);
        b.mech_source = Mlp::zeros(b.mech_source.config(), "mech_source");
        b.mech_target = Mlp::zeros(b.mech_target.config(), "mech_target");
        b.ctx_gen_source = Mlp::zeros(b.ctx_gen_source.config(), "ctx_gen_source");
        b.ctx_gen_target = Mlp::zeros(b.ctx_gen_target.config(), "ctx_gen_target");
        b.noise_gen_source = Mlp::zeros(b.noise_gen_source.config(), "noise_gen_source");
        b.noise_gen_target = Mlp::zeros(b.noise_gen_target.config(), "noise_gen_target");
        return b;
    }

    void fit_standardizers(const Tensor& y_source_rows, const Tensor& y_target_rows) {
        y_std_source = Standardizer::fit(y_source_rows);
        y_std_target = Standardizer::fit(y_target_rows);
    }

    Mlp& mech(Domain dom) { return dom == Domain::source ? mech_source : mech_target; }
    Mlp& ctx_gen(Domain dom) { return dom == Domain::source ? ctx_gen_source : ctx_gen_target; }
    Mlp& noise_gen(Domain dom) { return dom == Domain::source ? noise_gen_source : noise_gen_target; }
    const Mlp& mech(Domain dom) const { return dom == Domain::source ? mech_source : mech_target; }
    const Mlp& ctx_gen(Domain dom) const { return dom == Domain::source ? ctx_gen_source : ctx_gen_target; }
    const Mlp& noise_gen(Domain dom) const {
        return dom == Domain::source ? noise_gen_source : noise_gen_target;
    }
    const Standardizer& y_std(Domain dom) const { return dom == Domain::source ? y_std_source : y_std_target; }

    std::vector<ParamRef> params() {
        std::vector<ParamRef> out;
        for (Mlp* net : {&mech_source, &mech_target, &ctx_gen_source, &ctx_gen_target, &noise_gen_source,
                         &noise_gen_target}) {
            for (auto& p : net->params()) out.push_back(p);
        }
        return out;
    }

private:
    static NcmBundle shell(std::size_t d, std::size_t hidden) {
        if (d == 0) throw std::invalid_argument("NcmBundle: d must be >= 1");
        NcmBundle b;
        b.d = d;
        MlpConfig mech{3 * d, hidden, 5, 2 * d, 0.25, false};
        MlpConfig ctx{d, hidden, 1, d, 0.01, true};
        MlpConfig noise{d, hidden, 3, d, 0.01, true};
        b.mech_source = Mlp::zeros(mech, "mech_source");
        b.mech_target = Mlp::zeros(mech, "mech_target");
        b.ctx_gen_source = Mlp::zeros(ctx, "ctx_gen_source");
        b.ctx_gen_target = Mlp::zeros(ctx, "ctx_gen_target");
        b.noise_gen_source = Mlp::zeros(noise, "noise_gen_source");
        b.noise_gen_target = Mlp::zeros(noise, "noise_gen_target");
        b.y_std_source = Standardizer::identity(2 * d);
        b.y_std_target = Standardizer::identity(2 * d);
        return b;
    }
};

struct BundleBinding {
    Mlp::Binding mech_s, mech_t, ctx_s, ctx_t, noise_s, noise_t;

    const Mlp::Binding& mech(Domain dom) const { return dom == Domain::source ? mech_s : mech_t; }
    const Mlp::Binding& ctx(Domain dom) const { return dom == Domain::source ? ctx_s : ctx_t; }
    const Mlp::Binding& noise(Domain dom) const { return dom == Domain::source ? noise_s : noise_t; }
};

inline BundleBinding bind(Tape& tape, NcmBundle& bundle) {
    BundleBinding b;
    b.mech_s = bundle.mech_source.bind(tape);
    b.mech_t = bundle.mech_target.bind(tape);
    b.ctx_s = bundle.ctx_gen_source.bind(tape);
    b.ctx_t = bundle.ctx_gen_target.bind(tape);
    b.noise_s = bundle.noise_gen_source.bind(tape);
    b.noise_t = bundle.noise_gen_target.bind(tape);
    return b;
}

// Generated effects for a block of rows: mechanism(concat(x, ctx(eta_c),
// noise(eta_n))), in standardized and raw coordinates.
struct EffectVars {
    Var std_space;
    Var raw;
};

inline EffectVars effect_rows(Tape& tape, const NcmBundle& bundle, const BundleBinding& bound, Domain dom,
                              const Tensor& x_rows, const Tensor& eta_c, const Tensor& eta_n) {
    const Var ctx = bundle.ctx_gen(dom).forward(tape, bound.ctx(dom), tape.constant(eta_c));
    const Var noise = bundle.noise_gen(dom).forward(tape, bound.noise(dom), tape.constant(eta_n));
    const Var inp = tape.concat_cols({tape.constant(x_rows), ctx, noise});
    const Var std_space = bundle.mech(dom).forward(tape, bound.mech(dom), inp);
    return {std_space, bundle.y_std(dom).invert(tape, std_space)};
}

inline Tensor effect_rows(const NcmBundle& bundle, Domain dom, const Tensor& x_rows, const Tensor& eta_c,
                          const Tensor& eta_n) {
    const Tensor ctx = bundle.ctx_gen(dom).forward(eta_c);
    const Tensor noise = bundle.noise_gen(dom).forward(eta_n);
    const Tensor inp = concat_cols({&x_rows, &ctx, &noise});
    return bundle.y_std(dom).invert(bundle.mech(dom).forward(inp));
}

inline Tensor gen_effect(const NcmBundle& bundle, Domain dom, const Tensor& x, const ExogenousDraw& draw) {
    if (x.size() != bundle.d) throw std::invalid_argument("gen_effect: x must have dimension d");
    const Tensor out = effect_rows(bundle, dom, x.reshaped({std::size_t{1}, bundle.d}),
                                   draw.eta_c.reshaped({std::size_t{1}, bundle.d}),
                                   draw.eta_n.reshaped({std::size_t{1}, bundle.d}));
    return out.reshaped({2 * bundle.d});
}

inline Var gen_effect(Tape& tape, const NcmBundle& bundle, const BundleBinding& bound, Domain dom,
                      const Tensor& x, const ExogenousDraw& draw) {
    if (x.size() != bundle.d) throw std::invalid_argument("gen_effect: x must have dimension d");
    return effect_rows(tape, bundle, bound, dom, x.reshaped({std::size_t{1}, bundle.d}),
                       draw.eta_c.reshaped({std::size_t{1}, bundle.d}),
                       draw.eta_n.reshaped({std::size_t{1}, bundle.d}))
        .raw;
}

// Kernel least-squares generator loss over a batch: mean_i of the conditional
// loss between data point y_i and q generated effects at x_i, fresh exogenous
// draws per (i, j).
inline Var loss_gen(Tape& tape, const NcmBundle& bundle, const BundleBinding& bound, Domain dom,
                    const Tensor& x_batch, const Tensor& y_batch, std::size_t q, double rho, Rng& rng) {
    const std::size_t n = x_batch.rows();
    if (n == 0 || q == 0) throw std::invalid_argument("loss_gen: need n >= 1 and q >= 1");
    const Tensor x_rep = repeat_rows(x_batch, q);
    const Tensor eta_c = normal_rows(n * q, bundle.d, rng);
    const Tensor eta_n = normal_rows(n * q, bundle.d, rng);
    const EffectVars eff = effect_rows(tape, bundle, bound, dom, x_rep, eta_c, eta_n);
    return cond_kls_batch(tape, eff.std_space, bundle.y_std(dom).apply(y_batch), q, rho);
}

// Pluggable disambiguation cost over aligned rows of raw-space effects.
struct DisCost {
    std::function<Var(Tape&, Var ys_rows, Var yt_rows)> fn;

    // Eq.-style instantiation: mean_rows || ys[:d] - yt[d:]/2 ||^2, the blocks
    // that carry the shared context in both mechanisms.
    static DisCost block_mse(std::size_t d) {
        DisCost c;
        c.fn = [d](Tape& tape, Var ys, Var yt) {
            const Var diff =
                tape.sub(tape.slice_cols(ys, 0, d), tape.scale(tape.slice_cols(yt, d, 2 * d), 0.5));
            const double rows = double(tape.value(diff).rows());
            return tape.scale(tape.sum_all(tape.square(diff)), 1.0 / rows);
        };
        return c;
    }

    static DisCost zero() {
        DisCost c;
        c.fn = [](Tape& tape, Var, Var) { return tape.constant(Tensor::scalar(0.0)); };
        return c;
    }
};

// Disambiguation loss: both mechanisms consume the same source-context draws
// c = ctx_gen_source(eta_c) at shared source covariates; only the noise slots
// differ. dis should then vanish exactly when the context roles are wired
// correctly and the mechanisms are right.
inline Var loss_tr(Tape& tape, const NcmBundle& bundle, const BundleBinding& bound, const Tensor& x_batch,
                   std::size_t q_tr, const DisCost& dis, Rng& rng) {
    const std::size_t n = x_batch.rows();
    if (n == 0 || q_tr == 0) throw std::invalid_argument("loss_tr: need n >= 1 and q_tr >= 1");
    const Tensor x_rep = repeat_rows(x_batch, q_tr);
    const Tensor eta_c = normal_rows(n * q_tr, bundle.d, rng);
    const Tensor eta_ns = normal_rows(n * q_tr, bundle.d, rng);
    const Tensor eta_nt = normal_rows(n * q_tr, bundle.d, rng);

    const Var ctx = bundle.ctx_gen_source.forward(tape, bound.ctx_s, tape.constant(eta_c));
    const Var noise_s = bundle.noise_gen_source.forward(tape, bound.noise_s, tape.constant(eta_ns));
    const Var noise_t = bundle.noise_gen_target.forward(tape, bound.noise_t, tape.constant(eta_nt));
    const Var xc = tape.constant(x_rep);
    const Var ys_std = bundle.mech_source.forward(tape, bound.mech_s, tape.concat_cols({xc, ctx, noise_s}));
    const Var yt_std = bundle.mech_target.forward(tape, bound.mech_t, tape.concat_cols({xc, ctx, noise_t}));
    const Var ys = bundle.y_std_source.invert(tape, ys_std);
    const Var yt = bundle.y_std_target.invert(tape, yt_std);
    return dis.fn(tape, ys, yt);
}

struct LossCsOptions {
    double rho = 1.0;
    double epsilon = 0.0;  // <= 0: auto (0.05 x mean cost)
    int max_iters = 1000;
    double tol = 1e-6;
};

// Covariate-shift corrective term: a Sinkhorn coupling between source and
// target covariates reweights the target-path generator loss so the target
// mechanism trains on source-covariate inputs.
inline Var loss_cs(Tape& tape, const NcmBundle& bundle, const BundleBinding& bound, const Tensor& x_source,
                   const Tensor& x_target, const Tensor& y_target, std::size_t q, const LossCsOptions& opts,
                   Rng& rng, bool* coupling_converged = nullptr) {
    if (x_source.rows() == 0 || x_target.rows() == 0) throw std::invalid_argument("loss_cs: empty batch");
    const Tensor cost = pairwise_sq_cost(x_source, x_target);
    const double eps = opts.epsilon > 0.0 ? opts.epsilon : auto_epsilon(cost);
    const OtCoupling coupling = sinkhorn(cost, eps, opts.max_iters, opts.tol);
    if (coupling_converged != nullptr) *coupling_converged = coupling.converged;

    const std::size_t m = x_source.rows();
    const Tensor x_rep = repeat_rows(x_source, q);
    const Tensor eta_c = normal_rows(m * q, bundle.d, rng);
    const Tensor eta_n = normal_rows(m * q, bundle.d, rng);
    const EffectVars eff = effect_rows(tape, bundle, bound, Domain::target, x_rep, eta_c, eta_n);
    return cond_kls_weighted(tape, eff.std_space, bundle.y_std_target.apply(y_target), coupling.pi, q,
                             opts.rho);
}

struct StageOneWeights {
    double lambda_s = 1.0;
    double lambda_t = 1.0;
    double lambda_tr = 1.0;
    double lambda_cs = 0.0;
};

struct StageOneParts {
    double gen_s = 0.0, gen_t = 0.0, cs = 0.0, tr = 0.0;
};

struct StageOneRngs {
    Rng& gen_s;
    Rng& gen_t;
    Rng& tr;
    Rng& cs;
};

// lambda_s * lS_gen + lambda_t * lT_gen + lambda_cs * l_cs + lambda_tr * l_tr.
// Terms with zero weight are skipped entirely (no RNG consumption).
inline Var total_stage1_loss(Tape& tape, const NcmBundle& bundle, const BundleBinding& bound,
                             const Tensor& xs, const Tensor& ys, const Tensor& xt, const Tensor& yt,
                             const StageOneWeights& weights, std::size_t q_gen, std::size_t q_tr, double rho,
                             const DisCost& dis, StageOneRngs rngs, StageOneParts* parts = nullptr,
                             bool* cs_converged = nullptr) {
    Var total = tape.constant(Tensor::scalar(0.0));
    StageOneParts out;
    if (weights.lambda_s != 0.0) {
        const Var l = loss_gen(tape, bundle, bound, Domain::source, xs, ys, q_gen, rho, rngs.gen_s);
        out.gen_s = tape.value(l)[0];
        total = tape.add(total, tape.scale(l, weights.lambda_s));
    }
    if (weights.lambda_t != 0.0) {
        const Var l = loss_gen(tape, bundle, bound, Domain::target, xt, yt, q_gen, rho, rngs.gen_t);
        out.gen_t = tape.value(l)[0];
        total = tape.add(total, tape.scale(l, weights.lambda_t));
    }
    if (weights.lambda_cs != 0.0) {
        LossCsOptions opts;
        opts.rho = rho;
        const Var l = loss_cs(tape, bundle, bound, xs, xt, yt, q_gen, opts, rngs.cs, cs_converged);
        out.cs = tape.value(l)[0];
        total = tape.add(total, tape.scale(l, weights.lambda_cs));
    }
    if (weights.lambda_tr != 0.0) {
        const Var l = loss_tr(tape, bundle, bound, xs, q_tr, dis, rngs.tr);
        out.tr = tape.value(l)[0];
        total = tape.add(total, tape.scale(l, weights.lambda_tr));
    }
    if (parts != nullptr) *parts = out;
    return total;
}

}  // namespace ctfgen
