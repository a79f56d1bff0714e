#pragma once

// Samplers for the synthetic priors: Beta via the Marsaglia-Tsang gamma
// generator, von Mises via Best-Fisher rejection, and ContinuousBernoulli via
// its closed-form inverse CDF.

#include "ctfgen/rng.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace ctfgen {

// Gamma(shape, 1). Marsaglia-Tsang for shape >= 1; boosted for shape < 1.
inline double sample_gamma(double shape, Rng& rng) {
    if (shape <= 0.0) throw std::invalid_argument("sample_gamma: shape must be positive");
    if (shape < 1.0) {
        const double u = rng.uniform(0.0, 1.0);
        return sample_gamma(shape + 1.0, rng) * std::pow(u, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
        double x = rng.normal();
        double v = 1.0 + c * x;
        if (v <= 0.0) continue;
        v = v * v * v;
        const double u = rng.uniform(0.0, 1.0);
        if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
        if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
}

inline double sample_beta(double a, double b, Rng& rng) {
    const double ga = sample_gamma(a, rng);
    const double gb = sample_gamma(b, rng);
    return ga / (ga + gb);
}

// Best-Fisher (1979) rejection sampler. Returns an angle in (-pi, pi] + mean.
inline double sample_von_mises(double mean, double kappa, Rng& rng) {
    if (kappa <= 0.0) throw std::invalid_argument("sample_von_mises: kappa must be positive");
    const double tau = 1.0 + std::sqrt(1.0 + 4.0 * kappa * kappa);
    const double rho = (tau - std::sqrt(2.0 * tau)) / (2.0 * kappa);
    const double r = (1.0 + rho * rho) / (2.0 * rho);
    double f = 0.0;
    for (;;) {
        const double u1 = rng.uniform(0.0, 1.0);
        const double z = std::cos(std::numbers::pi * u1);
        f = (1.0 + r * z) / (r + z);
        const double c = kappa * (r - f);
        const double u2 = rng.uniform(0.0, 1.0);
        if (c * (2.0 - c) - u2 > 0.0) break;
        if (std::log(c / u2) + 1.0 - c >= 0.0) break;
    }
    const double u3 = rng.uniform(0.0, 1.0);
    double theta = mean + (u3 > 0.5 ? 1.0 : -1.0) * std::acos(f);
    if (theta <= -std::numbers::pi) theta += 2.0 * std::numbers::pi;
    if (theta > std::numbers::pi) theta -= 2.0 * std::numbers::pi;
    return theta;
}

// Unnormalized density lambda^x (1-lambda)^(1-x) on [0, 1]; inverse-CDF draw.
inline double sample_continuous_bernoulli(double lambda, Rng& rng) {
    if (lambda <= 0.0 || lambda >= 1.0) {
        throw std::invalid_argument("sample_continuous_bernoulli: lambda must lie in (0, 1)");
    }
    const double u = rng.uniform(0.0, 1.0);
    if (std::abs(lambda - 0.5) < 1e-12) return u;
    const double t = std::log(lambda) - std::log1p(-lambda);
    return std::log1p(u * (2.0 * lambda - 1.0) / (1.0 - lambda)) / t;
}

}  // namespace ctfgen
