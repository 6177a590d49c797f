#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "vaelab/errors.hpp"
#include "vaelab/rng.hpp"

namespace vaelab::num {

// Dense row-major matrix. Vectors are 1xN or Nx1, scalars 1x1. This is the
// only value type the tape knows about.
template <typename T>
struct MatT {
    int rows = 0;
    int cols = 0;
    std::vector<T> a;

    MatT() = default;
    MatT(int r, int c) : rows(r), cols(c), a(static_cast<std::size_t>(r) * c, T{0}) {}
    MatT(int r, int c, std::vector<T> data) : rows(r), cols(c), a(std::move(data)) {
        if (a.size() != static_cast<std::size_t>(r) * c)
            throw ShapeError("MatT: data length does not match " + shape_str());
    }

    static MatT zeros(int r, int c) { return MatT(r, c); }
    static MatT full(int r, int c, T v) {
        MatT m(r, c);
        std::fill(m.a.begin(), m.a.end(), v);
        return m;
    }
    static MatT scalar(T v) { return full(1, 1, v); }

    T& operator()(int i, int j) { return a[static_cast<std::size_t>(i) * cols + j]; }
    const T& operator()(int i, int j) const { return a[static_cast<std::size_t>(i) * cols + j]; }

    std::size_t size() const { return a.size(); }
    bool same_shape(const MatT& o) const { return rows == o.rows && cols == o.cols; }
    bool is_scalar() const { return rows == 1 && cols == 1; }
    T item() const {
        if (!is_scalar()) throw ContractError("item() on non-scalar " + shape_str());
        return a[0];
    }

    std::string shape_str() const {
        return "(" + std::to_string(rows) + "x" + std::to_string(cols) + ")";
    }

    void fill(T v) { std::fill(a.begin(), a.end(), v); }
    void set_zero() { fill(T{0}); }

    void fill_uniform(Rng& rng, T lo, T hi) {
        for (auto& x : a) x = static_cast<T>(rng.uniform_range(lo, hi));
    }
    void fill_normal(Rng& rng) {
        for (auto& x : a) x = static_cast<T>(rng.normal());
    }
};

namespace detail {
template <typename T>
using EMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename T>
using CEMap =
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

template <typename T>
EMap<T> emap(MatT<T>& m) {
    return EMap<T>(m.a.data(), m.rows, m.cols);
}
template <typename T>
CEMap<T> emap(const MatT<T>& m) {
    return CEMap<T>(m.a.data(), m.rows, m.cols);
}
}  // namespace detail

// out = a * b
template <typename T>
void matmul_into(const MatT<T>& a, const MatT<T>& b, MatT<T>& out) {
    detail::emap(out).noalias() = detail::emap(a) * detail::emap(b);
}

// out += a * b^T
template <typename T>
void add_matmul_bt(const MatT<T>& a, const MatT<T>& b, MatT<T>& out) {
    detail::emap(out).noalias() += detail::emap(a) * detail::emap(b).transpose();
}

// out += a^T * b
template <typename T>
void add_matmul_at(const MatT<T>& a, const MatT<T>& b, MatT<T>& out) {
    detail::emap(out).noalias() += detail::emap(a).transpose() * detail::emap(b);
}

using Mat = MatT<double>;

}  // namespace vaelab::num
