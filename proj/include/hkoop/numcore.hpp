#pragma once

// Dense real linear algebra: one-sided Jacobi SVD, nonsymmetric eigen-decomposition,
// minimum-norm least squares and the matrix exponential.
//
// Everything is templated on the Eigen expression type so callers can pass blocks,
// maps or products without materialising them first.

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <numeric>
#include <vector>

#include <Eigen/Dense>

#include "hkoop/errors.hpp"

namespace hkoop {

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
struct Svd {
    Mat<Scalar> U;  // rows x k, orthonormal columns
    Vec<Scalar> S;  // k, descending
    Mat<Scalar> V;  // cols x k, orthonormal columns
};

template <typename Scalar>
struct EigenPairs {
    Vec<std::complex<Scalar>> values;
    Mat<std::complex<Scalar>> vectors;  // column i pairs with values(i)
};

namespace detail {

// Completes columns [first, k) of q to an orthonormal set using canonical basis
// vectors, two passes of modified Gram-Schmidt each.
template <typename Scalar>
void complete_orthonormal(Mat<Scalar>& q, Eigen::Index first) {
    const Eigen::Index m = q.rows();
    Eigen::Index next_unit = 0;
    for (Eigen::Index j = first; j < q.cols(); ++j) {
        for (;;) {
            if (next_unit >= m) throw NumericalFailure("svd: cannot complete orthonormal basis");
            Vec<Scalar> cand = Vec<Scalar>::Unit(m, next_unit++);
            for (int pass = 0; pass < 2; ++pass)
                for (Eigen::Index i = 0; i < j; ++i) cand -= q.col(i).dot(cand) * q.col(i);
            const Scalar nrm = cand.norm();
            if (nrm > Scalar(0.5)) {
                q.col(j) = cand / nrm;
                break;
            }
        }
    }
}

// Hestenes one-sided Jacobi on a matrix with rows >= cols.
template <typename Scalar>
Svd<Scalar> jacobi_svd_tall(Mat<Scalar> g) {
    const Eigen::Index m = g.rows();
    const Eigen::Index n = g.cols();
    Mat<Scalar> v = Mat<Scalar>::Identity(n, n);
    const Scalar tol = std::numeric_limits<Scalar>::epsilon() * Scalar(m);
    constexpr int kMaxSweeps = 80;
    // Columns below this squared norm are roundoff and are not rotated further.
    const Scalar negligible = [](Scalar x) { return x * x; }(std::numeric_limits<Scalar>::epsilon() * g.norm());

    bool converged = (n < 2);
    for (int sweep = 0; sweep < kMaxSweeps && !converged; ++sweep) {
        bool rotated = false;
        for (Eigen::Index p = 0; p + 1 < n; ++p) {
            for (Eigen::Index q = p + 1; q < n; ++q) {
                const Scalar alpha = g.col(p).squaredNorm();
                const Scalar beta = g.col(q).squaredNorm();
                const Scalar gamma = g.col(p).dot(g.col(q));
                if (alpha <= negligible || beta <= negligible) continue;
                if (gamma == Scalar(0) || std::abs(gamma) <= tol * std::sqrt(alpha * beta)) continue;
                rotated = true;
                const Scalar zeta = (beta - alpha) / (Scalar(2) * gamma);
                const Scalar t = std::copysign(Scalar(1), zeta) /
                                 (std::abs(zeta) + std::sqrt(Scalar(1) + zeta * zeta));
                const Scalar c = Scalar(1) / std::sqrt(Scalar(1) + t * t);
                const Scalar s = c * t;
                for (Eigen::Index i = 0; i < m; ++i) {
                    const Scalar gp = g(i, p);
                    const Scalar gq = g(i, q);
                    g(i, p) = c * gp - s * gq;
                    g(i, q) = s * gp + c * gq;
                }
                for (Eigen::Index i = 0; i < n; ++i) {
                    const Scalar vp = v(i, p);
                    const Scalar vq = v(i, q);
                    v(i, p) = c * vp - s * vq;
                    v(i, q) = s * vp + c * vq;
                }
            }
        }
        converged = !rotated;
    }
    if (!converged) throw NumericalFailure("svd: one-sided Jacobi did not converge");

    Vec<Scalar> sv(n);
    for (Eigen::Index j = 0; j < n; ++j) sv(j) = g.col(j).norm();
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](Eigen::Index a, Eigen::Index b) { return sv(a) > sv(b); });

    Svd<Scalar> out;
    out.U.resize(m, n);
    out.S.resize(n);
    out.V.resize(n, n);
    const Scalar floor = n > 0 ? sv(order[0]) * tol : Scalar(0);
    Eigen::Index nonzero = 0;
    for (Eigen::Index j = 0; j < n; ++j) {
        const auto src = order[static_cast<std::size_t>(j)];
        out.S(j) = sv(src);
        out.V.col(j) = v.col(src);
        if (sv(src) > floor && sv(src) > Scalar(0)) {
            out.U.col(j) = g.col(src) / sv(src);
            nonzero = j + 1;
        }
    }
    // Columns for (numerically) zero singular values carry no information.
    complete_orthonormal(out.U, nonzero);
    return out;
}

}  // namespace detail

/// Thin SVD, A = U diag(S) V^T with k = min(rows, cols).
/// Throws NumericalFailure if the Jacobi sweeps hit their cap.
template <typename Derived>
Svd<typename Derived::Scalar> svd(const Eigen::MatrixBase<Derived>& a) {
    using Scalar = typename Derived::Scalar;
    if (a.rows() < 1 || a.cols() < 1) throw ContractViolation("svd: empty matrix");
    if (!a.allFinite()) throw ContractViolation("svd: non-finite input");
    if (a.rows() >= a.cols()) return detail::jacobi_svd_tall<Scalar>(a.eval());
    auto t = detail::jacobi_svd_tall<Scalar>(a.transpose().eval());
    std::swap(t.U, t.V);
    return t;
}

/// Eigenvalues and eigenvectors of a real square matrix, sorted by real part then
/// imaginary part, both descending. Backed by Eigen's Hessenberg + Francis QR.
template <typename Derived>
EigenPairs<typename Derived::Scalar> eig(const Eigen::MatrixBase<Derived>& a) {
    using Scalar = typename Derived::Scalar;
    if (a.rows() != a.cols()) throw ContractViolation("eig: matrix must be square");
    if (!a.allFinite()) throw ContractViolation("eig: non-finite input");
    const Eigen::Index n = a.rows();
    EigenPairs<Scalar> out;
    if (n == 0) return out;

    Eigen::EigenSolver<Mat<Scalar>> solver(a.eval(), true);
    if (solver.info() != Eigen::Success) throw NumericalFailure("eig: QR iteration did not converge");

    const auto values = solver.eigenvalues();
    const auto vectors = solver.eigenvectors();
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::stable_sort(order.begin(), order.end(), [&](Eigen::Index i, Eigen::Index j) {
        if (values(i).real() != values(j).real()) return values(i).real() > values(j).real();
        return values(i).imag() > values(j).imag();
    });
    out.values.resize(n);
    out.vectors.resize(n, n);
    for (Eigen::Index k = 0; k < n; ++k) {
        out.values(k) = values(order[static_cast<std::size_t>(k)]);
        out.vectors.col(k) = vectors.col(order[static_cast<std::size_t>(k)]);
    }
    return out;
}

/// Minimum-norm least-squares solution of A X = B. Singular values below
/// 1e-10 * S[0] are treated as zero.
template <typename DerivedA, typename DerivedB>
Mat<typename DerivedA::Scalar> lstsq(const Eigen::MatrixBase<DerivedA>& a,
                                     const Eigen::MatrixBase<DerivedB>& b) {
    using Scalar = typename DerivedA::Scalar;
    if (a.rows() != b.rows()) throw ContractViolation("lstsq: row count mismatch");
    const auto f = svd(a);
    const Scalar cutoff = Scalar(1e-10) * f.S(0);
    Vec<Scalar> inv = Vec<Scalar>::Zero(f.S.size());
    for (Eigen::Index i = 0; i < f.S.size(); ++i)
        if (f.S(i) > cutoff && f.S(i) > Scalar(0)) inv(i) = Scalar(1) / f.S(i);
    return f.V * inv.asDiagonal() * (f.U.transpose() * b);
}

namespace detail {

// True when a is block diagonal with 1x1 blocks and 2x2 blocks of the form
// [[mu, -w], [w, mu]]. block_start receives the first index of each block.
template <typename Derived>
bool rotation_block_structure(const Eigen::MatrixBase<Derived>& a, std::vector<Eigen::Index>& block_start) {
    const Eigen::Index n = a.rows();
    block_start.clear();
    Eigen::Index i = 0;
    while (i < n) {
        const bool coupled = i + 1 < n && (a(i + 1, i) != 0 || a(i, i + 1) != 0);
        const Eigen::Index size = coupled ? 2 : 1;
        if (coupled && (a(i, i) != a(i + 1, i + 1) || a(i, i + 1) != -a(i + 1, i))) return false;
        for (Eigen::Index r = i; r < i + size; ++r)
            for (Eigen::Index c = 0; c < n; ++c) {
                if (c >= i && c < i + size) continue;
                if (a(r, c) != 0 || a(c, r) != 0) return false;
            }
        block_start.push_back(i);
        i += size;
    }
    return true;
}

template <typename Scalar>
Mat<Scalar> expm_scaling_squaring(const Mat<Scalar>& a) {
    const Eigen::Index n = a.rows();
    const Scalar norm1 = a.cwiseAbs().colwise().sum().maxCoeff();
    int squarings = 0;
    if (norm1 > Scalar(0.5)) squarings = static_cast<int>(std::ceil(std::log2(norm1 / Scalar(0.5))));
    const Mat<Scalar> scaled = a / std::ldexp(Scalar(1), squarings);

    Mat<Scalar> result = Mat<Scalar>::Identity(n, n);
    Mat<Scalar> term = Mat<Scalar>::Identity(n, n);
    for (int k = 1; k <= 30; ++k) {
        term = (term * scaled) / Scalar(k);
        result += term;
        if (term.cwiseAbs().maxCoeff() <= std::numeric_limits<Scalar>::epsilon() * result.cwiseAbs().maxCoeff())
            break;
    }
    for (int s = 0; s < squarings; ++s) result = result * result;
    return result;
}

}  // namespace detail

/// Matrix exponential. Rotation-block-diagonal input (1x1 and [[mu,-w],[w,mu]]
/// blocks) is handled in closed form; anything else uses Taylor scaling-and-squaring.
template <typename Derived>
Mat<typename Derived::Scalar> matexp(const Eigen::MatrixBase<Derived>& a) {
    using Scalar = typename Derived::Scalar;
    if (a.rows() != a.cols()) throw ContractViolation("matexp: matrix must be square");
    const Eigen::Index n = a.rows();
    std::vector<Eigen::Index> blocks;
    if (!detail::rotation_block_structure(a, blocks)) return detail::expm_scaling_squaring<Scalar>(a.eval());

    Mat<Scalar> out = Mat<Scalar>::Zero(n, n);
    for (std::size_t b = 0; b < blocks.size(); ++b) {
        const Eigen::Index i = blocks[b];
        const Eigen::Index end = b + 1 < blocks.size() ? blocks[b + 1] : n;
        const Scalar growth = std::exp(a(i, i));
        if (end - i == 1) {
            out(i, i) = growth;
            continue;
        }
        const Scalar w = a(i + 1, i);
        const Scalar c = std::cos(w);
        const Scalar s = std::sin(w);
        out(i, i) = growth * c;
        out(i, i + 1) = -growth * s;
        out(i + 1, i) = growth * s;
        out(i + 1, i + 1) = growth * c;
    }
    return out;
}

}  // namespace hkoop
