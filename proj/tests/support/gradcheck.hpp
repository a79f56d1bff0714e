#pragma once

// Finite-difference gradient oracle for the test suites. The oracle only
// evaluates the loss as a black box; it never inspects tape internals.

#include "ctfgen/mlp.hpp"

#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

namespace testsupport {

inline std::vector<double> flatten(const std::vector<ctfgen::ParamRef>& params) {
    std::vector<double> out;
    for (const auto& p : params) {
        for (std::size_t i = 0; i < p.tensor->size(); ++i) out.push_back((*p.tensor)[i]);
    }
    return out;
}

inline void unflatten(const std::vector<ctfgen::ParamRef>& params, const std::vector<double>& flat) {
    std::size_t k = 0;
    for (const auto& p : params) {
        for (std::size_t i = 0; i < p.tensor->size(); ++i) (*p.tensor)[i] = flat[k++];
    }
}

// Central differences through the given parameter list. Restores parameters.
inline std::vector<double> central_differences(const std::vector<ctfgen::ParamRef>& params,
                                               const std::function<double()>& loss, double h = 1e-5) {
    const std::vector<double> base = flatten(params);
    std::vector<double> grad(base.size());
    std::vector<double> work = base;
    for (std::size_t k = 0; k < base.size(); ++k) {
        work[k] = base[k] + h;
        unflatten(params, work);
        const double up = loss();
        work[k] = base[k] - h;
        unflatten(params, work);
        const double down = loss();
        work[k] = base[k];
        grad[k] = (up - down) / (2.0 * h);
    }
    unflatten(params, base);
    return grad;
}

struct GradCompare {
    double max_err = 0.0;
    std::size_t argmax = 0;
    bool ok = true;
};

// err = |a-b| / max(|a|, |b|, floor): relative error with an absolute floor so
// genuinely-zero gradients do not divide by zero.
inline GradCompare compare_grads(const std::vector<double>& analytic, const std::vector<double>& fd,
                                 double tol, double floor = 1e-4) {
    GradCompare res;
    for (std::size_t k = 0; k < analytic.size(); ++k) {
        const double denom = std::max({std::abs(analytic[k]), std::abs(fd[k]), floor});
        const double err = std::abs(analytic[k] - fd[k]) / denom;
        if (err > res.max_err) {
            res.max_err = err;
            res.argmax = k;
        }
    }
    res.ok = res.max_err < tol;
    return res;
}

}  // namespace testsupport
