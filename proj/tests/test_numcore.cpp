#include <doctest.h>

#include <numbers>

#include "hkoop/numcore.hpp"
#include "support.hpp"

using namespace hkoop;
using hkoop::test::random_matrix;

TEST_CASE("svd of identity and diagonal matrices") {
    const auto f = svd(Eigen::MatrixXd::Identity(3, 3));
    CHECK((f.S - Eigen::Vector3d::Ones()).norm() < 1e-14);

    Eigen::MatrixXd d = Eigen::Vector3d(1, 3, 2).asDiagonal();
    const auto g = svd(d);
    CHECK((g.S - Eigen::Vector3d(3, 2, 1)).norm() < 1e-14);
    CHECK((g.U.cwiseAbs() - g.V.cwiseAbs()).norm() < 1e-14);
    CHECK((g.U * g.S.asDiagonal() * g.V.transpose() - d).norm() < 1e-14);
}

TEST_CASE("svd reconstructs random matrices and has orthonormal factors") {
    for (auto [rows, cols] : {std::pair{8, 5}, std::pair{5, 8}, std::pair{64, 64}, std::pair{40, 7}, std::pair{1, 6}}) {
        const Eigen::MatrixXd a = random_matrix(rows, cols, static_cast<std::uint64_t>(rows * 100 + cols));
        const auto f = svd(a);
        const Eigen::Index k = std::min(rows, cols);
        CHECK((f.U * f.S.asDiagonal() * f.V.transpose() - a).norm() / a.norm() < 1e-10);
        CHECK((f.U.transpose() * f.U - Eigen::MatrixXd::Identity(k, k)).cwiseAbs().maxCoeff() < 1e-10);
        CHECK((f.V.transpose() * f.V - Eigen::MatrixXd::Identity(k, k)).cwiseAbs().maxCoeff() < 1e-10);
        for (Eigen::Index i = 1; i < k; ++i) CHECK(f.S(i) <= f.S(i - 1));
        // Singular values agree with an independent solver.
        Eigen::BDCSVD<Eigen::MatrixXd> ref(a);
        CHECK((ref.singularValues() - f.S).norm() < 1e-10 * f.S(0));
    }
}

TEST_CASE("svd of a rank-deficient matrix keeps orthonormal U") {
    const Eigen::MatrixXd a = random_matrix(10, 2, 1) * random_matrix(2, 6, 2);
    const auto f = svd(a);
    CHECK(f.S(2) < 1e-12 * f.S(0));
    CHECK((f.U.transpose() * f.U - Eigen::MatrixXd::Identity(6, 6)).cwiseAbs().maxCoeff() < 1e-10);
    CHECK((f.U * f.S.asDiagonal() * f.V.transpose() - a).norm() < 1e-10 * a.norm());
}

TEST_CASE("svd rejects empty and non-finite input") {
    CHECK_THROWS_AS(svd(Eigen::MatrixXd(0, 3)), ContractViolation);
    Eigen::MatrixXd bad = Eigen::MatrixXd::Ones(2, 2);
    bad(0, 1) = std::nan("");
    CHECK_THROWS_AS(svd(bad), ContractViolation);
}

TEST_CASE("eig trivial and closed-form cases") {
    Eigen::Matrix2d rot;
    rot << 0, -1, 1, 0;
    const auto r = eig(rot);
    CHECK(std::abs(r.values(0) - std::complex<double>(0, 1)) < 1e-12);
    CHECK(std::abs(r.values(1) - std::complex<double>(0, -1)) < 1e-12);

    const auto d = eig(Eigen::Vector2d(2, -3).asDiagonal().toDenseMatrix());
    CHECK(std::abs(d.values(0) - 2.0) < 1e-12);
    CHECK(std::abs(d.values(1) + 3.0) < 1e-12);

    // Companion matrix of z^2 - z - 1.
    Eigen::Matrix2d comp;
    comp << 1, 1, 1, 0;
    const auto c = eig(comp);
    const double phi = (1.0 + std::sqrt(5.0)) / 2.0;
    CHECK(std::abs(c.values(0) - phi) < 1e-12);
    CHECK(std::abs(c.values(1) - (1.0 - phi)) < 1e-12);
}

TEST_CASE("eig residual and symmetric spectra") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const Eigen::MatrixXd a = random_matrix(12, 12, seed);
        const auto e = eig(a);
        const Eigen::MatrixXcd ac = a.cast<std::complex<double>>();
        for (Eigen::Index i = 0; i < 12; ++i)
            CHECK((ac * e.vectors.col(i) - e.values(i) * e.vectors.col(i)).norm() <= 1e-8 * a.norm());
        for (Eigen::Index i = 1; i < 12; ++i) CHECK(e.values(i).real() <= e.values(i - 1).real());

        const Eigen::MatrixXd sym = a + a.transpose();
        const auto s = eig(sym);
        CHECK(s.values.imag().cwiseAbs().maxCoeff() <= 1e-10);
    }
    CHECK_THROWS_AS(eig(Eigen::MatrixXd::Ones(2, 3)), ContractViolation);
}

TEST_CASE("lstsq identity, plant-and-recover and minimum norm") {
    const Eigen::MatrixXd b = random_matrix(4, 3, 7);
    CHECK((lstsq(Eigen::MatrixXd::Identity(4, 4), b) - b).norm() < 1e-14);

    const Eigen::MatrixXd a = random_matrix(20, 5, 8);
    const Eigen::MatrixXd x0 = random_matrix(5, 2, 9);
    CHECK((lstsq(a, a * x0) - x0).cwiseAbs().maxCoeff() < 1e-8);

    // Rank-deficient: compare against the pseudo-inverse built from an independent SVD.
    const Eigen::MatrixXd low = random_matrix(9, 2, 10) * random_matrix(2, 5, 11);
    const Eigen::MatrixXd rhs = random_matrix(9, 2, 12);
    const Eigen::MatrixXd x = lstsq(low, rhs);
    Eigen::JacobiSVD<Eigen::MatrixXd> ref(low, Eigen::ComputeThinU | Eigen::ComputeThinV);
    ref.setThreshold(1e-10);
    const Eigen::MatrixXd pinv_x = ref.solve(rhs);
    CHECK((x - pinv_x).norm() < 1e-8 * pinv_x.norm());
    // Adding a null-space component never lowers the norm.
    const Eigen::VectorXd null_dir = ref.matrixV().col(4);
    CHECK((low * null_dir).norm() < 1e-10);
    CHECK(x.norm() < (x + null_dir * Eigen::RowVector2d(1, 1)).norm());
}

TEST_CASE("matexp closed forms") {
    CHECK((matexp(Eigen::MatrixXd::Zero(3, 3)) - Eigen::MatrixXd::Identity(3, 3)).norm() < 1e-15);

    Eigen::Matrix2d half;
    half << 0, -std::numbers::pi, std::numbers::pi, 0;
    CHECK((matexp(half) + Eigen::Matrix2d::Identity()).cwiseAbs().maxCoeff() < 1e-10);

    Eigen::Matrix2d quarter;
    quarter << 0, -std::numbers::pi / 2, std::numbers::pi / 2, 0;
    Eigen::Matrix2d expect;
    expect << 0, -1, 1, 0;
    CHECK((matexp(quarter) - expect).cwiseAbs().maxCoeff() < 1e-10);

    const Eigen::MatrixXd d = Eigen::Vector2d(std::log(2.0), std::log(3.0)).asDiagonal();
    CHECK((matexp(d) - Eigen::Vector2d(2, 3).asDiagonal().toDenseMatrix()).norm() < 1e-14);
}

TEST_CASE("matexp general matrices") {
    // Symmetric input: compare with the spectral formula.
    const Eigen::MatrixXd a = random_matrix(6, 6, 3);
    const Eigen::MatrixXd sym = 0.5 * (a + a.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
    const Eigen::MatrixXd ref =
        es.eigenvectors() * es.eigenvalues().array().exp().matrix().asDiagonal() * es.eigenvectors().transpose();
    CHECK((matexp(sym) - ref).norm() < 1e-10 * ref.norm());

    // exp(A) exp(-A) = I.
    CHECK((matexp(a) * matexp(Eigen::MatrixXd(-a)) - Eigen::MatrixXd::Identity(6, 6)).norm() < 1e-9);

    // Commuting co-diagonal blocks: exp(A + B) = exp(A) exp(B).
    Eigen::MatrixXd ab = Eigen::MatrixXd::Zero(4, 4), bb = Eigen::MatrixXd::Zero(4, 4);
    ab.topLeftCorner(2, 2) << 0.3, -1.2, 1.2, 0.3;
    ab(2, 2) = -0.7;
    ab(3, 3) = 0.2;
    bb.topLeftCorner(2, 2) << -0.1, -0.4, 0.4, -0.1;
    bb(2, 2) = 0.5;
    bb(3, 3) = 1.1;
    CHECK((matexp(Eigen::MatrixXd(ab + bb)) - matexp(ab) * matexp(bb)).cwiseAbs().maxCoeff() < 1e-8);
    // The same holds away from the closed-form path.
    Eigen::MatrixXd full = random_matrix(4, 4, 5);
    const Eigen::MatrixXd f1 = 0.3 * full, f2 = 0.7 * full;
    CHECK((matexp(Eigen::MatrixXd(f1 + f2)) - matexp(f1) * matexp(f2)).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("numcore routines are deterministic") {
    const Eigen::MatrixXd a = random_matrix(15, 9, 4);
    const auto f1 = svd(a), f2 = svd(a);
    CHECK(f1.U == f2.U);
    CHECK(f1.S == f2.S);
    CHECK(f1.V == f2.V);
    const Eigen::MatrixXd sq = random_matrix(7, 7, 5);
    CHECK(eig(sq).values == eig(sq).values);
    CHECK(matexp(sq) == matexp(sq));
}
