#pragma once

// MMD^2 estimators and the kernel least-squares losses as fused autodiff ops.
// The conditional loss for one data point y with q generated samples is the
// kernel expansion of || Phi(y) - (1/q) sum_j Phi(yhat_j) ||^2:
//
//   k(y,y) - (2/q) sum_j k(y, yhat_j) + (1/q^2) sum_{j,j'} k(yhat_j, yhat_j')
//
// Gradients flow into the generated samples only; data points are constants.
// All ops use the IMQ kernel; its gradient in the first argument is
// -(a - b) * (rho + ||a-b||^2)^{-3/2}.

#include "ctfgen/autodiff.hpp"
#include "ctfgen/kernels.hpp"
#include "ctfgen/tensor.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

namespace ctfgen {

enum class MmdEstimator { biased, unbiased };

inline double mmd2(const Tensor& a, const Tensor& b, const KernelConfig& kernel, MmdEstimator estimator) {
    kernel.validate();
    if (a.ndim() != 2 || b.ndim() != 2 || a.cols() != b.cols()) {
        throw std::invalid_argument("mmd2: inputs must be 2-d with matching dimension");
    }
    const std::size_t m = a.rows(), n = b.rows(), k = a.cols();
    const std::size_t min_size = estimator == MmdEstimator::biased ? 1 : 2;
    if (m < min_size || n < min_size) {
        throw std::invalid_argument("mmd2: need at least " + std::to_string(min_size) + " samples per set");
    }

    double aa = 0.0, bb = 0.0, ab = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) ab += kernel_eval(kernel, a.data() + i * k, b.data() + j * k, k);
    }
    if (estimator == MmdEstimator::biased) {
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < m; ++j) aa += kernel_eval(kernel, a.data() + i * k, a.data() + j * k, k);
        }
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) bb += kernel_eval(kernel, b.data() + i * k, b.data() + j * k, k);
        }
        return aa / (double(m) * m) + bb / (double(n) * n) - 2.0 * ab / (double(m) * n);
    }
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
            if (i != j) aa += kernel_eval(kernel, a.data() + i * k, a.data() + j * k, k);
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            if (i != j) bb += kernel_eval(kernel, b.data() + i * k, b.data() + j * k, k);
        }
    }
    return aa / (double(m) * (m - 1)) + bb / (double(n) * (n - 1)) - 2.0 * ab / (double(m) * n);
}

namespace detail {
// d/da of imq(a, b): -(a-b) t^3 with t = (rho + r^2)^{-1/2}, accumulated into out.
inline void add_imq_grad(double* out, const double* a, const double* b, std::size_t k, double rho,
                         double weight) {
    const double t = 1.0 / std::sqrt(rho + sq_dist(a, b, k));
    const double t3 = t * t * t;
    for (std::size_t i = 0; i < k; ++i) out[i] += weight * (-(a[i] - b[i]) * t3);
}
}  // namespace detail

// Mean over n conditioning points of the kernel least-squares loss; gen_rows
// holds q generated samples per point, grouped row-blocks of size q.
inline Var cond_kls_batch(Tape& tape, Var gen_rows, const Tensor& data_rows, std::size_t q, double rho) {
    if (rho <= 0.0) throw std::invalid_argument("cond_kls_batch: rho must be > 0");
    const Tensor& gen = tape.value(gen_rows);
    const std::size_t n = data_rows.rows(), k = data_rows.cols();
    if (q == 0 || gen.ndim() != 2 || gen.rows() != n * q || gen.cols() != k) {
        throw std::invalid_argument("cond_kls_batch: gen rows must be (n*q) x dim");
    }

    const double self_term = 1.0 / std::sqrt(rho);
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double* y = data_rows.data() + i * k;
        double cross = 0.0, pair = 0.0;
        for (std::size_t j = 0; j < q; ++j) {
            const double* gj = gen.data() + (i * q + j) * k;
            cross += imq(y, gj, k, rho);
            for (std::size_t j2 = 0; j2 < q; ++j2) {
                pair += imq(gj, gen.data() + (i * q + j2) * k, k, rho);
            }
        }
        loss += self_term - 2.0 * cross / double(q) + pair / (double(q) * q);
    }
    loss /= double(n);

    return tape.custom({gen_rows}, Tensor::scalar(loss),
                       [data = data_rows, q, rho](const Tensor& gout, const std::vector<const Tensor*>& vin,
                                                  const std::vector<Tensor*>& gin) {
                           if (gin[0] == nullptr) return;
                           const Tensor& gen = *vin[0];
                           Tensor& grad = *gin[0];
                           const std::size_t n = data.rows(), k = data.cols();
                           const double g0 = gout[0];
                           for (std::size_t i = 0; i < n; ++i) {
                               const double* y = data.data() + i * k;
                               for (std::size_t j = 0; j < q; ++j) {
                                   const std::size_t row = i * q + j;
                                   const double* gj = gen.data() + row * k;
                                   double* out = grad.data() + row * k;
                                   // cross term: -(2/q) k(y, g); d/dg = +(y-g) t^3 => via add_imq_grad(g, y).
                                   detail::add_imq_grad(out, gj, y, k, rho, g0 * (-2.0 / double(q)) / double(n));
                                   for (std::size_t j2 = 0; j2 < q; ++j2) {
                                       if (j2 == j) continue;
                                       detail::add_imq_grad(out, gj, gen.data() + (i * q + j2) * k, k, rho,
                                                            g0 * 2.0 / (double(q) * q) / double(n));
                                   }
                               }
                           }
                       });
}

// Single-point form: || Phi(y) - mean_j Phi(yhat_j) ||^2 for one observation.
inline Var conditional_kls_loss(Tape& tape, const Tensor& real_y, Var gen_rows, double rho) {
    const Tensor& gen = tape.value(gen_rows);
    if (gen.ndim() != 2 || gen.rows() == 0) throw std::invalid_argument("conditional_kls_loss: need q >= 1 rows");
    const Tensor data = real_y.reshaped({std::size_t{1}, real_y.size()});
    return cond_kls_batch(tape, gen_rows, data, gen.rows(), rho);
}

// Transport-weighted variant: sum_{i,t} w[i][t] * kls(y_t, {g_i1..g_iq}).
// Weights are a coupling over (generated-block i, data point t) and already
// sum to one, so no further normalization is applied.
inline Var cond_kls_weighted(Tape& tape, Var gen_rows, const Tensor& data_rows, const Tensor& weights,
                             std::size_t q, double rho) {
    if (rho <= 0.0) throw std::invalid_argument("cond_kls_weighted: rho must be > 0");
    const Tensor& gen = tape.value(gen_rows);
    const std::size_t m = weights.rows(), n = weights.cols(), k = data_rows.cols();
    if (data_rows.rows() != n || q == 0 || gen.rows() != m * q || gen.cols() != k) {
        throw std::invalid_argument("cond_kls_weighted: inconsistent shapes");
    }

    std::vector<double> row_sum(m, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t t = 0; t < n; ++t) row_sum[i] += weights.at(i, t);
    }

    const double self_term = 1.0 / std::sqrt(rho);
    double loss = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        double pair = 0.0;
        for (std::size_t j = 0; j < q; ++j) {
            const double* gj = gen.data() + (i * q + j) * k;
            for (std::size_t j2 = 0; j2 < q; ++j2) pair += imq(gj, gen.data() + (i * q + j2) * k, k, rho);
        }
        loss += row_sum[i] * (self_term + pair / (double(q) * q));
        for (std::size_t t = 0; t < n; ++t) {
            const double w = weights.at(i, t);
            if (w == 0.0) continue;
            const double* y = data_rows.data() + t * k;
            double cross = 0.0;
            for (std::size_t j = 0; j < q; ++j) cross += imq(y, gen.data() + (i * q + j) * k, k, rho);
            loss -= w * 2.0 * cross / double(q);
        }
    }

    return tape.custom(
        {gen_rows}, Tensor::scalar(loss),
        [data = data_rows, w = weights, row_sum, q, rho](const Tensor& gout,
                                                         const std::vector<const Tensor*>& vin,
                                                         const std::vector<Tensor*>& gin) {
            if (gin[0] == nullptr) return;
            const Tensor& gen = *vin[0];
            Tensor& grad = *gin[0];
            const std::size_t m = w.rows(), n = w.cols(), k = data.cols();
            const double g0 = gout[0];
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t j = 0; j < q; ++j) {
                    const std::size_t row = i * q + j;
                    const double* gj = gen.data() + row * k;
                    double* out = grad.data() + row * k;
                    for (std::size_t t = 0; t < n; ++t) {
                        const double wit = w.at(i, t);
                        if (wit == 0.0) continue;
                        detail::add_imq_grad(out, gj, data.data() + t * k, k, rho, -g0 * wit * 2.0 / double(q));
                    }
                    for (std::size_t j2 = 0; j2 < q; ++j2) {
                        if (j2 == j) continue;
                        detail::add_imq_grad(out, gj, gen.data() + (i * q + j2) * k, k, rho,
                                             g0 * row_sum[i] * 2.0 / (double(q) * q));
                    }
                }
            }
        });
}

// Biased MMD^2 between two row sets under the IMQ kernel, differentiable in both.
inline Var mmd2_biased_imq(Tape& tape, Var a_rows, Var b_rows, double rho) {
    if (rho <= 0.0) throw std::invalid_argument("mmd2_biased_imq: rho must be > 0");
    const Tensor& a = tape.value(a_rows);
    const Tensor& b = tape.value(b_rows);
    const double value = mmd2(a, b, KernelConfig::make_imq(rho), MmdEstimator::biased);

    return tape.custom(
        {a_rows, b_rows}, Tensor::scalar(value),
        [rho](const Tensor& gout, const std::vector<const Tensor*>& vin, const std::vector<Tensor*>& gin) {
            const Tensor& a = *vin[0];
            const Tensor& b = *vin[1];
            const std::size_t m = a.rows(), n = b.rows(), k = a.cols();
            const double g0 = gout[0];
            if (gin[0] != nullptr) {
                Tensor& ga = *gin[0];
                for (std::size_t i = 0; i < m; ++i) {
                    double* out = ga.data() + i * k;
                    const double* ai = a.data() + i * k;
                    for (std::size_t j = 0; j < m; ++j) {
                        if (j == i) continue;
                        detail::add_imq_grad(out, ai, a.data() + j * k, k, rho, g0 * 2.0 / (double(m) * m));
                    }
                    for (std::size_t j = 0; j < n; ++j) {
                        detail::add_imq_grad(out, ai, b.data() + j * k, k, rho, -g0 * 2.0 / (double(m) * n));
                    }
                }
            }
            if (gin[1] != nullptr) {
                Tensor& gb = *gin[1];
                for (std::size_t j = 0; j < n; ++j) {
                    double* out = gb.data() + j * k;
                    const double* bj = b.data() + j * k;
                    for (std::size_t j2 = 0; j2 < n; ++j2) {
                        if (j2 == j) continue;
                        detail::add_imq_grad(out, bj, b.data() + j2 * k, k, rho, g0 * 2.0 / (double(n) * n));
                    }
                    for (std::size_t i = 0; i < m; ++i) {
                        detail::add_imq_grad(out, bj, a.data() + i * k, k, rho, -g0 * 2.0 / (double(m) * n));
                    }
                }
            }
        });
}

// Energy distance (V-statistic): 2 E||a-b|| - E||a-a'|| - E||b-b'||.
inline Var energy_distance(Tape& tape, Var a_rows, Var b_rows) {
    const Tensor& a = tape.value(a_rows);
    const Tensor& b = tape.value(b_rows);
    const std::size_t m = a.rows(), n = b.rows(), k = a.cols();
    if (b.cols() != k || m == 0 || n == 0) throw std::invalid_argument("energy_distance: bad shapes");

    const auto mean_dist = [k](const Tensor& u, const Tensor& v) {
        double s = 0.0;
        for (std::size_t i = 0; i < u.rows(); ++i) {
            for (std::size_t j = 0; j < v.rows(); ++j) {
                s += std::sqrt(sq_dist(u.data() + i * k, v.data() + j * k, k));
            }
        }
        return s / (double(u.rows()) * v.rows());
    };
    const double value = 2.0 * mean_dist(a, b) - mean_dist(a, a) - mean_dist(b, b);

    // d||a-b||/da = (a-b)/||a-b||, zero at coincident points.
    const auto add_dist_grad = [](double* out, const double* x, const double* y, std::size_t kk, double w) {
        const double r = std::sqrt(sq_dist(x, y, kk));
        if (r < 1e-300) return;
        for (std::size_t i = 0; i < kk; ++i) out[i] += w * (x[i] - y[i]) / r;
    };

    return tape.custom(
        {a_rows, b_rows}, Tensor::scalar(value),
        [add_dist_grad](const Tensor& gout, const std::vector<const Tensor*>& vin,
                        const std::vector<Tensor*>& gin) {
            const Tensor& a = *vin[0];
            const Tensor& b = *vin[1];
            const std::size_t m = a.rows(), n = b.rows(), k = a.cols();
            const double g0 = gout[0];
            if (gin[0] != nullptr) {
                for (std::size_t i = 0; i < m; ++i) {
                    double* out = gin[0]->data() + i * k;
                    const double* ai = a.data() + i * k;
                    for (std::size_t j = 0; j < n; ++j) {
                        add_dist_grad(out, ai, b.data() + j * k, k, g0 * 2.0 / (double(m) * n));
                    }
                    for (std::size_t j = 0; j < m; ++j) {
                        if (j != i) add_dist_grad(out, ai, a.data() + j * k, k, -g0 * 2.0 / (double(m) * m));
                    }
                }
            }
            if (gin[1] != nullptr) {
                for (std::size_t j = 0; j < n; ++j) {
                    double* out = gin[1]->data() + j * k;
                    const double* bj = b.data() + j * k;
                    for (std::size_t i = 0; i < m; ++i) {
                        add_dist_grad(out, bj, a.data() + i * k, k, g0 * 2.0 / (double(m) * n));
                    }
                    for (std::size_t j2 = 0; j2 < n; ++j2) {
                        if (j2 != j) add_dist_grad(out, bj, b.data() + j2 * k, k, -g0 * 2.0 / (double(n) * n));
                    }
                }
            }
        });
}

}  // namespace ctfgen
