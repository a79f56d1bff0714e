#pragma once

// Dense row-major tensor of 64-bit reals. Shapes are explicit; no implicit
// broadcasting. Heavy kernels (matmul, SPD solves) map the buffers into Eigen.
// Invariant: product(shape) == data.size() at all times.

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace ctfgen {

class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> shape)
        : shape_(std::move(shape)), data_(count(shape_), 0.0) {}

    Tensor(std::vector<std::size_t> shape, std::vector<double> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (count(shape_) != data_.size()) {
            throw std::invalid_argument("Tensor: shape/data size mismatch");
        }
    }

    static Tensor scalar(double v) { return Tensor({1}, {v}); }
    static Tensor vec(std::vector<double> v) {
        const std::size_t n = v.size();
        return Tensor({n}, std::move(v));
    }
    static Tensor zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }
    static Tensor full(std::vector<std::size_t> shape, double v) {
        Tensor t(std::move(shape));
        for (double& x : t.data_) x = v;
        return t;
    }

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t ndim() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }

    std::size_t rows() const {
        if (ndim() != 2) throw std::invalid_argument("Tensor::rows: tensor is not 2-d");
        return shape_[0];
    }
    std::size_t cols() const {
        if (ndim() != 2) throw std::invalid_argument("Tensor::cols: tensor is not 2-d");
        return shape_[1];
    }

    double operator[](std::size_t i) const { return data_[i]; }
    double& operator[](std::size_t i) { return data_[i]; }

    double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
    double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }

    const double* data() const { return data_.data(); }
    double* data() { return data_.data(); }
    const std::vector<double>& values() const { return data_; }
    std::vector<double>& values() { return data_; }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    bool all_finite() const {
        for (double v : data_) {
            if (!std::isfinite(v)) return false;
        }
        return true;
    }

    // Same buffer, new shape; element count must match.
    Tensor reshaped(std::vector<std::size_t> shape) const {
        if (count(shape) != data_.size()) throw std::invalid_argument("Tensor::reshaped: size mismatch");
        return Tensor(std::move(shape), data_);
    }

    void fill(double v) {
        for (double& x : data_) x = v;
    }

    std::string shape_str() const {
        std::string s = "[";
        for (std::size_t i = 0; i < shape_.size(); ++i) {
            if (i) s += ",";
            s += std::to_string(shape_[i]);
        }
        return s + "]";
    }

private:
    static std::size_t count(const std::vector<std::size_t>& shape) {
        return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
    }

    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

namespace detail {
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

inline ConstMatMap as_eigen(const Tensor& t) {
    return ConstMatMap(t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}
inline MatMap as_eigen(Tensor& t) {
    return MatMap(t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}
}  // namespace detail

// C = A @ B for 2-d tensors.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.cols() != b.rows()) {
        throw std::invalid_argument("matmul: incompatible shapes " + a.shape_str() + " x " + b.shape_str());
    }
    Tensor c({a.rows(), b.cols()});
    detail::as_eigen(c).noalias() = detail::as_eigen(a) * detail::as_eigen(b);
    return c;
}

// C += upstream @ B^T and similar accumulation forms used by backprop.
inline void matmul_acc_abT(Tensor& out, const Tensor& a, const Tensor& b) {
    detail::as_eigen(out).noalias() += detail::as_eigen(a) * detail::as_eigen(b).transpose();
}
inline void matmul_acc_aTb(Tensor& out, const Tensor& a, const Tensor& b) {
    detail::as_eigen(out).noalias() += detail::as_eigen(a).transpose() * detail::as_eigen(b);
}

inline Tensor add(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("add: shape mismatch");
    Tensor c = a;
    for (std::size_t i = 0; i < c.size(); ++i) c[i] += b[i];
    return c;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("sub: shape mismatch");
    Tensor c = a;
    for (std::size_t i = 0; i < c.size(); ++i) c[i] -= b[i];
    return c;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("mul: shape mismatch");
    Tensor c = a;
    for (std::size_t i = 0; i < c.size(); ++i) c[i] *= b[i];
    return c;
}

inline Tensor scale(const Tensor& a, double s) {
    Tensor c = a;
    for (std::size_t i = 0; i < c.size(); ++i) c[i] *= s;
    return c;
}

// Adds a length-cols vector to every row of a 2-d tensor.
inline Tensor add_rowvec(const Tensor& m, const Tensor& v) {
    if (m.ndim() != 2 || v.size() != m.cols()) throw std::invalid_argument("add_rowvec: shape mismatch");
    Tensor c = m;
    for (std::size_t r = 0; r < m.rows(); ++r) {
        for (std::size_t k = 0; k < m.cols(); ++k) c.at(r, k) += v[k];
    }
    return c;
}

inline Tensor mul_rowvec(const Tensor& m, const Tensor& v) {
    if (m.ndim() != 2 || v.size() != m.cols()) throw std::invalid_argument("mul_rowvec: shape mismatch");
    Tensor c = m;
    for (std::size_t r = 0; r < m.rows(); ++r) {
        for (std::size_t k = 0; k < m.cols(); ++k) c.at(r, k) *= v[k];
    }
    return c;
}

inline Tensor prelu(const Tensor& x, double slope) {
    Tensor y = x;
    for (std::size_t i = 0; i < y.size(); ++i) {
        if (y[i] < 0.0) y[i] *= slope;  // x >= 0 branch passes through, including x == 0
    }
    return y;
}

inline Tensor concat_cols(const std::vector<const Tensor*>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
    const std::size_t rows = parts[0]->rows();
    std::size_t cols = 0;
    for (const Tensor* p : parts) {
        if (p->ndim() != 2 || p->rows() != rows) throw std::invalid_argument("concat_cols: row mismatch");
        cols += p->cols();
    }
    Tensor out({rows, cols});
    std::size_t off = 0;
    for (const Tensor* p : parts) {
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t k = 0; k < p->cols(); ++k) out.at(r, off + k) = p->at(r, k);
        }
        off += p->cols();
    }
    return out;
}

inline Tensor slice_cols(const Tensor& m, std::size_t begin, std::size_t end) {
    if (m.ndim() != 2 || begin > end || end > m.cols()) throw std::invalid_argument("slice_cols: bad range");
    Tensor out({m.rows(), end - begin});
    for (std::size_t r = 0; r < m.rows(); ++r) {
        for (std::size_t k = begin; k < end; ++k) out.at(r, k - begin) = m.at(r, k);
    }
    return out;
}

inline double sum(const Tensor& a) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i];
    return s;
}

// Solve A x = b for symmetric positive definite A via Cholesky.
inline Tensor cholesky_solve(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || a.rows() != a.cols() || b.size() != a.rows()) {
        throw std::invalid_argument("cholesky_solve: shape mismatch");
    }
    const auto n = static_cast<Eigen::Index>(a.rows());
    Eigen::MatrixXd am(n, n);
    for (Eigen::Index r = 0; r < n; ++r) {
        for (Eigen::Index c = 0; c < n; ++c) am(r, c) = a.at(static_cast<std::size_t>(r), static_cast<std::size_t>(c));
    }
    Eigen::VectorXd bv(n);
    for (Eigen::Index i = 0; i < n; ++i) bv(i) = b[static_cast<std::size_t>(i)];
    const Eigen::LLT<Eigen::MatrixXd> llt(am);
    if (llt.info() != Eigen::Success) throw std::runtime_error("cholesky_solve: matrix not positive definite");
    const Eigen::VectorXd x = llt.solve(bv);
    std::vector<double> out(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = x(i);
    return Tensor::vec(std::move(out));
}

}  // namespace ctfgen
