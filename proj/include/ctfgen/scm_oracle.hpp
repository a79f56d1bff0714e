#pragma once

// Analytic ground-truth SCMs for the synthetic benchmark. X, C, N have
// dimension d; effects Y have dimension 2d. With A(x) = B^T B + 5 I and
// B = x (2^x)^T:
//
//   source:  y[:d] = A(x) exp(c) / 2      target:  y[:d] = c . n^2 + x
//            y[d:] = c . n + x                     y[d:] = A(x) exp(c)
//
// (. is the Hadamard product, exp/^2 elementwise). A(x) is SPD with smallest
// eigenvalue >= 5, so the exp-block is exactly invertible: given (x, y) the
// source context is c = ln(2 A^{-1} y[:d]) and its noise n = (y[d:] - x) / c.
// On the target side only the context is recoverable; the noise enters
// squared, so n is identified up to sign.
//
// Priors: source X ~ U(-1,1), C = 1 - 2 Beta(4,5), N ~ vonMises(0, 4);
// target X = 1 - 2 ContinuousBernoulli(0.6), C ~ N(0, I), N ~ N(0, 0.1 I),
// all componentwise i.i.d.

#include "ctfgen/distributions.hpp"
#include "ctfgen/rng.hpp"
#include "ctfgen/tensor.hpp"

#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace ctfgen {

enum class Domain { source, target };

inline const char* domain_name(Domain d) { return d == Domain::source ? "source" : "target"; }

inline Domain domain_from_string(const std::string& s) {
    if (s == "source") return Domain::source;
    if (s == "target") return Domain::target;
    throw std::invalid_argument("unknown domain '" + s + "' (expected source|target)");
}

constexpr double kTargetNoiseVariance = 0.1;
constexpr double kDegenerateContextTol = 1e-9;

struct InfeasibleObservationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DegenerateContextError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct LatentTriple {
    Tensor x;  // d
    Tensor c;  // d
    Tensor n;  // d
    Domain domain = Domain::source;
};

struct ObservationalSample {
    Tensor x;  // d
    Tensor y;  // 2d
    std::optional<Tensor> c;
    std::optional<Tensor> n;
};

struct CfQuery {
    Tensor x_fact;  // d
    Tensor y_fact;  // 2d
    Tensor x_intv;  // d
};

inline Tensor sample_x_prior(Domain domain, std::size_t d, Rng& rng) {
    Tensor x({d});
    for (std::size_t i = 0; i < d; ++i) {
        x[i] = domain == Domain::source ? rng.uniform(-1.0, 1.0)
                                        : 1.0 - 2.0 * sample_continuous_bernoulli(0.6, rng);
    }
    return x;
}

inline LatentTriple sample_prior(Domain domain, std::size_t d, Rng& rng) {
    if (d == 0) throw std::invalid_argument("sample_prior: d must be >= 1");
    LatentTriple t;
    t.domain = domain;
    t.x = sample_x_prior(domain, d, rng);
    t.c = Tensor({d});
    t.n = Tensor({d});
    for (std::size_t i = 0; i < d; ++i) {
        if (domain == Domain::source) {
            t.c[i] = 1.0 - 2.0 * sample_beta(4.0, 5.0, rng);
            t.n[i] = sample_von_mises(0.0, 4.0, rng);
        } else {
            t.c[i] = rng.normal();
            t.n[i] = rng.normal(0.0, std::sqrt(kTargetNoiseVariance));
        }
    }
    return t;
}

// A(x) = B^T B + 5I with B = x (2^x)^T, i.e. A_jk = ||x||^2 2^{x_j} 2^{x_k} + 5[j==k].
inline Tensor build_A(const Tensor& x) {
    const std::size_t d = x.size();
    double xsq = 0.0;
    for (std::size_t i = 0; i < d; ++i) xsq += x[i] * x[i];
    std::vector<double> p2(d);
    for (std::size_t i = 0; i < d; ++i) p2[i] = std::exp2(x[i]);
    Tensor a({d, d});
    for (std::size_t j = 0; j < d; ++j) {
        for (std::size_t k = j; k < d; ++k) {
            const double v = xsq * (p2[j] * p2[k]) + (j == k ? 5.0 : 0.0);
            a.at(j, k) = v;
            a.at(k, j) = v;
        }
    }
    return a;
}

namespace detail {
inline void check_dims(const Tensor& x, const Tensor& c, const Tensor& n, const char* who) {
    if (x.size() == 0 || x.size() != c.size() || x.size() != n.size()) {
        throw std::invalid_argument(std::string(who) + ": x, c, n must share dimension d >= 1");
    }
}
inline Tensor matvec(const Tensor& a, const std::vector<double>& v) {
    const std::size_t d = v.size();
    Tensor out({d});
    for (std::size_t j = 0; j < d; ++j) {
        double s = 0.0;
        for (std::size_t k = 0; k < d; ++k) s += a.at(j, k) * v[k];
        out[j] = s;
    }
    return out;
}
}  // namespace detail

inline Tensor source_mechanism(const Tensor& x, const Tensor& c, const Tensor& n) {
    detail::check_dims(x, c, n, "source_mechanism");
    const std::size_t d = x.size();
    const Tensor a = build_A(x);
    std::vector<double> ec(d);
    for (std::size_t i = 0; i < d; ++i) ec[i] = std::exp(c[i]);
    const Tensor top = detail::matvec(a, ec);
    Tensor y({2 * d});
    for (std::size_t i = 0; i < d; ++i) {
        y[i] = top[i] / 2.0;
        y[d + i] = c[i] * n[i] + x[i];
    }
    return y;
}

inline Tensor target_mechanism(const Tensor& x, const Tensor& c, const Tensor& n) {
    detail::check_dims(x, c, n, "target_mechanism");
    const std::size_t d = x.size();
    const Tensor a = build_A(x);
    std::vector<double> ec(d);
    for (std::size_t i = 0; i < d; ++i) ec[i] = std::exp(c[i]);
    const Tensor bottom = detail::matvec(a, ec);
    Tensor y({2 * d});
    for (std::size_t i = 0; i < d; ++i) {
        y[i] = c[i] * n[i] * n[i] + x[i];
        y[d + i] = bottom[i];
    }
    return y;
}

struct SourceLatents {
    Tensor c;
    Tensor n;
};

// Exact inverse of the source mechanism: c = ln(2 A^{-1} y[:d]) elementwise,
// n = (y[d:] - x) / c elementwise.
inline SourceLatents abduct_source(const Tensor& x, const Tensor& y) {
    const std::size_t d = x.size();
    if (y.size() != 2 * d || d == 0) throw std::invalid_argument("abduct_source: y must have dimension 2d");
    const Tensor a = build_A(x);
    Tensor top({d});
    for (std::size_t i = 0; i < d; ++i) top[i] = y[i];
    const Tensor v = cholesky_solve(a, top);
    SourceLatents out{Tensor({d}), Tensor({d})};
    for (std::size_t i = 0; i < d; ++i) {
        const double w = 2.0 * v[i];
        if (!(w > 0.0)) {
            throw InfeasibleObservationError("abduct_source: component " + std::to_string(i) +
                                             " of 2 A^{-1} y[:d] is not positive (" + std::to_string(w) + ")");
        }
        out.c[i] = std::log(w);
    }
    for (std::size_t i = 0; i < d; ++i) {
        if (std::abs(out.c[i]) < kDegenerateContextTol) {
            throw DegenerateContextError("abduct_source: |c_" + std::to_string(i) +
                                         "| < 1e-9, noise is unrecoverable");
        }
        out.n[i] = (y[d + i] - x[i]) / out.c[i];
    }
    return out;
}

inline Tensor abduct_target_context(const Tensor& x, const Tensor& y) {
    const std::size_t d = x.size();
    if (y.size() != 2 * d || d == 0) throw std::invalid_argument("abduct_target_context: y must have dimension 2d");
    const Tensor a = build_A(x);
    Tensor bottom({d});
    for (std::size_t i = 0; i < d; ++i) bottom[i] = y[d + i];
    const Tensor v = cholesky_solve(a, bottom);
    Tensor c({d});
    for (std::size_t i = 0; i < d; ++i) {
        if (!(v[i] > 0.0)) {
            throw InfeasibleObservationError("abduct_target_context: component " + std::to_string(i) +
                                             " of A^{-1} y[d:] is not positive");
        }
        c[i] = std::log(v[i]);
    }
    return c;
}

// |n| = sqrt((y[:d] - x) / c); the sign is not identified.
inline Tensor target_noise_magnitude(const Tensor& x, const Tensor& y, const Tensor& c) {
    const std::size_t d = x.size();
    Tensor mag({d});
    for (std::size_t i = 0; i < d; ++i) {
        if (std::abs(c[i]) < kDegenerateContextTol) {
            throw DegenerateContextError("target_noise_magnitude: |c_" + std::to_string(i) + "| < 1e-9");
        }
        const double ratio = (y[i] - x[i]) / c[i];
        if (ratio < 0.0) {
            throw InfeasibleObservationError("target_noise_magnitude: (y[:d]-x)/c negative at component " +
                                             std::to_string(i));
        }
        mag[i] = std::sqrt(ratio);
    }
    return mag;
}

// Ground-truth shifted counterfactuals: abduct the source context from the
// factual pair, then push (x_intv, c_fact, N_T) through the target mechanism
// with fresh N_T ~ N(0, 0.1 I) per sample.
inline std::vector<Tensor> shifted_counterfactual_oracle(const CfQuery& query, Rng& rng, std::size_t k) {
    const SourceLatents lat = abduct_source(query.x_fact, query.y_fact);
    const std::size_t d = query.x_fact.size();
    std::vector<Tensor> out;
    out.reserve(k);
    for (std::size_t s = 0; s < k; ++s) {
        Tensor n({d});
        for (std::size_t i = 0; i < d; ++i) n[i] = rng.normal(0.0, std::sqrt(kTargetNoiseVariance));
        out.push_back(target_mechanism(query.x_intv, lat.c, n));
    }
    return out;
}

}  // namespace ctfgen
