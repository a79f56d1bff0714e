#pragma once

// Aggregated MMD two-sample test. For each bandwidth in the grid the statistic
// is the U-type quadratic MMD built from H = Kxx + Kyy - Kxy - Kyx with the
// diagonal removed; null thresholds come from a Rademacher wild bootstrap
// (eps^T H eps with shared sign vectors across bandwidths), and the aggregated
// level is corrected by bisection so the probability that any bandwidth
// exceeds its threshold under the bootstrap stays at alpha. Requires equal
// sample sizes (the wild bootstrap pairs the two samples).
//
// Defaults: RBF kernel, median-heuristic anchor scaled by 2^{-3..3}, uniform
// weights, 500 bootstrap iterations for thresholds and 500 for calibration.

#include "ctfgen/kernels.hpp"
#include "ctfgen/rng.hpp"
#include "ctfgen/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace ctfgen {

struct MmdAggOptions {
    std::vector<double> bandwidths;  // empty: median heuristic x 2^{-3..3}
    int bootstrap_iters = 500;       // per batch (thresholds and calibration)
    int bisection_iters = 20;
};

struct BandwidthOutcome {
    double bandwidth = 0.0;
    double statistic = 0.0;
    double threshold = 0.0;
    bool reject = false;
};

struct TwoSampleResult {
    bool reject = false;
    double level = 0.0;        // requested alpha
    double corrected_u = 0.0;  // bisected level-correction factor
    std::vector<BandwidthOutcome> bands;

    double max_margin() const {
        double m = -std::numeric_limits<double>::infinity();
        for (const auto& b : bands) m = std::max(m, b.statistic - b.threshold);
        return m;
    }
};

inline TwoSampleResult mmdagg_test(const Tensor& a, const Tensor& b, double alpha,
                                   const MmdAggOptions& opts, Rng& rng) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.cols() != b.cols()) {
        throw std::invalid_argument("mmdagg_test: inputs must be 2-d with matching dimension");
    }
    if (a.rows() != b.rows()) {
        throw std::invalid_argument("mmdagg_test: the wild bootstrap requires equal sample sizes");
    }
    const std::size_t n = a.rows(), dim = a.cols();
    if (n < 20) throw std::invalid_argument("mmdagg_test: need at least 20 samples per side");
    if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("mmdagg_test: alpha must lie in (0,1)");

    std::vector<double> grid = opts.bandwidths;
    if (grid.empty()) grid = dyadic_bandwidths(median_heuristic(a, b));
    for (double bw : grid) {
        if (!(bw > 0.0)) throw std::invalid_argument("mmdagg_test: bandwidths must be positive");
    }
    const std::size_t bands = grid.size();
    const int b1 = opts.bootstrap_iters, b2 = opts.bootstrap_iters;
    if (b1 < 10) throw std::invalid_argument("mmdagg_test: bootstrap_iters too small");

    // Shared Rademacher draws: [0, b1) thresholds, [b1, b1+b2) calibration.
    Eigen::MatrixXd eps(n, b1 + b2);
    for (int c = 0; c < b1 + b2; ++c) {
        for (std::size_t r = 0; r < n; ++r) eps(static_cast<Eigen::Index>(r), c) = rng.rademacher();
    }

    const auto sq = [&](const Tensor& u, std::size_t i, const Tensor& v, std::size_t j) {
        return sq_dist(u.data() + i * dim, v.data() + j * dim, dim);
    };
    Eigen::MatrixXd dxx(n, n), dyy(n, n), dxy(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            dxx(i, j) = sq(a, i, a, j);
            dyy(i, j) = sq(b, i, b, j);
            dxy(i, j) = sq(a, i, b, j);
        }
    }

    // stats[band][0] = observed; stats[band][1..b1+b2] = bootstrap.
    std::vector<std::vector<double>> stats(bands, std::vector<double>(1 + b1 + b2));
    const double norm = 1.0 / (double(n) * (double(n) - 1.0));
    Eigen::MatrixXd h(n, n);
    for (std::size_t band = 0; band < bands; ++band) {
        const double inv = 1.0 / (grid[band] * grid[band]);
        h = (-dxx * inv).array().exp().matrix() + (-dyy * inv).array().exp().matrix();
        const Eigen::MatrixXd kxy = (-dxy * inv).array().exp().matrix();
        h -= kxy + kxy.transpose();
        const double diag = h.trace();
        stats[band][0] = (h.sum() - diag) * norm;
        const Eigen::MatrixXd he = h * eps;
        for (int c = 0; c < b1 + b2; ++c) {
            stats[band][1 + c] = (eps.col(c).dot(he.col(c)) - diag) * norm;
        }
    }

    // Per-band threshold at quantile 1 - u * w over {observed} + B1 bootstrap.
    const double weight = 1.0 / double(bands);
    std::vector<std::vector<double>> sorted(bands);
    for (std::size_t band = 0; band < bands; ++band) {
        sorted[band].assign(stats[band].begin(), stats[band].begin() + 1 + b1);
        std::sort(sorted[band].begin(), sorted[band].end());
    }
    const auto threshold = [&](std::size_t band, double u) {
        const double level = std::clamp(1.0 - u * weight, 0.0, 1.0);
        const auto count = static_cast<std::size_t>(std::ceil(level * double(1 + b1)));
        const std::size_t idx = std::min(std::max<std::size_t>(count, 1), std::size_t(1 + b1)) - 1;
        return sorted[band][idx];
    };
    const auto calib_reject_rate = [&](double u) {
        int rejections = 0;
        for (int c = b1; c < b1 + b2; ++c) {
            for (std::size_t band = 0; band < bands; ++band) {
                if (stats[band][1 + c] > threshold(band, u)) {
                    ++rejections;
                    break;
                }
            }
        }
        return double(rejections) / double(b2);
    };

    double lo = 0.0, hi = double(bands);
    if (calib_reject_rate(hi) <= alpha) {
        lo = hi;
    } else {
        for (int it = 0; it < opts.bisection_iters; ++it) {
            const double mid = 0.5 * (lo + hi);
            if (calib_reject_rate(mid) <= alpha) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
    }

    TwoSampleResult result;
    result.level = alpha;
    result.corrected_u = lo;
    for (std::size_t band = 0; band < bands; ++band) {
        BandwidthOutcome out;
        out.bandwidth = grid[band];
        out.statistic = stats[band][0];
        out.threshold = threshold(band, lo);
        out.reject = out.statistic > out.threshold;
        result.bands.push_back(out);
        result.reject = result.reject || out.reject;
    }
    return result;
}

inline TwoSampleResult mmdagg_test(const Tensor& a, const Tensor& b, double alpha, Rng& rng) {
    return mmdagg_test(a, b, alpha, MmdAggOptions{}, rng);
}

}  // namespace ctfgen
