#pragma once

// Kernel families used throughout: the inverse multiquadric
// k(x,y) = 1/sqrt(rho + ||x-y||^2) (the default, rho = 1), and the RBF
// k(x,y) = exp(-||x-y||^2 / bandwidth^2) used by the aggregated test's
// bandwidth grid. median_heuristic anchors that grid at the median pairwise
// distance of the pooled samples.

#include "ctfgen/log.hpp"
#include "ctfgen/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace ctfgen {

enum class KernelFamily { imq, rbf };

struct KernelConfig {
    KernelFamily family = KernelFamily::imq;
    double rho = 1.0;        // IMQ offset, >= 0
    double bandwidth = 1.0;  // RBF length scale, > 0

    static KernelConfig make_imq(double rho) { return KernelConfig{KernelFamily::imq, rho, 1.0}; }
    static KernelConfig make_rbf(double bandwidth) { return KernelConfig{KernelFamily::rbf, 0.0, bandwidth}; }

    void validate() const {
        if (family == KernelFamily::imq && rho < 0.0) throw std::invalid_argument("KernelConfig: rho must be >= 0");
        if (family == KernelFamily::rbf && bandwidth <= 0.0) {
            throw std::invalid_argument("KernelConfig: bandwidth must be > 0");
        }
    }
};

inline double sq_dist(const double* x, const double* y, std::size_t k) {
    double s = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        const double d = x[i] - y[i];
        s += d * d;
    }
    return s;
}

inline double imq(const double* x, const double* y, std::size_t k, double rho) {
    if (rho < 0.0) throw std::invalid_argument("imq: rho must be >= 0");
    const double denom = rho + sq_dist(x, y, k);
    if (denom == 0.0) throw std::domain_error("imq: rho = 0 with x == y divides by zero");
    return 1.0 / std::sqrt(denom);
}

inline double imq(const Tensor& x, const Tensor& y, double rho) {
    if (!x.same_shape(y)) throw std::invalid_argument("imq: shape mismatch");
    return imq(x.data(), y.data(), x.size(), rho);
}

inline double kernel_eval(const KernelConfig& cfg, const double* x, const double* y, std::size_t k) {
    if (cfg.family == KernelFamily::imq) return imq(x, y, k, cfg.rho);
    return std::exp(-sq_dist(x, y, k) / (cfg.bandwidth * cfg.bandwidth));
}

// Median of pairwise Euclidean distances over the pooled rows. Falls back to
// 1.0 with a warning when every point coincides.
inline double median_heuristic(const Tensor& pooled) {
    if (pooled.ndim() != 2 || pooled.rows() < 2) {
        throw std::invalid_argument("median_heuristic: need at least 2 points");
    }
    const std::size_t n = pooled.rows(), k = pooled.cols();
    std::vector<double> dists;
    dists.reserve(n * (n - 1) / 2);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            dists.push_back(std::sqrt(sq_dist(pooled.data() + i * k, pooled.data() + j * k, k)));
        }
    }
    std::nth_element(dists.begin(), dists.begin() + dists.size() / 2, dists.end());
    const double med = dists[dists.size() / 2];
    if (med <= 0.0) {
        log::info("median_heuristic: all points identical, falling back to bandwidth 1.0");
        return 1.0;
    }
    return med;
}

inline double median_heuristic(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.cols()) throw std::invalid_argument("median_heuristic: dimension mismatch");
    Tensor pooled({a.rows() + b.rows(), a.cols()});
    for (std::size_t i = 0; i < a.size(); ++i) pooled[i] = a[i];
    for (std::size_t i = 0; i < b.size(); ++i) pooled[a.size() + i] = b[i];
    return median_heuristic(pooled);
}

// anchor x 2^i for i in -3..3.
inline std::vector<double> dyadic_bandwidths(double anchor) {
    if (anchor <= 0.0) throw std::invalid_argument("dyadic_bandwidths: anchor must be > 0");
    std::vector<double> grid;
    for (int i = -3; i <= 3; ++i) grid.push_back(anchor * std::exp2(i));
    return grid;
}

}  // namespace ctfgen
