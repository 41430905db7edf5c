#include <doctest.h>

#include <filesystem>
#include <numbers>

#include "hkoop/numcore.hpp"
#include "hkoop/spectral.hpp"
#include "support.hpp"

using namespace hkoop;
using hkoop::test::random_matrix;

namespace {

Trajectory from_states(Eigen::MatrixXd states, double dt = 0.1) {
    Trajectory t;
    t.states = std::move(states);
    t.dt = dt;
    return t;
}

Trajectory linear_trajectory(const Eigen::MatrixXd& a, const Eigen::VectorXd& x0, int length) {
    Eigen::MatrixXd s(x0.size(), length);
    s.col(0) = x0;
    for (int k = 1; k < length; ++k) s.col(k) = a * s.col(k - 1);
    return from_states(s);
}

Eigen::Matrix2d rotation(double theta, double radius = 1.0) {
    Eigen::Matrix2d r;
    r << std::cos(theta), -std::sin(theta), std::sin(theta), std::cos(theta);
    return radius * r;
}

bool is_hankel(const Eigen::MatrixXd& m, int n) {
    const Eigen::Index r = m.rows() / n;
    for (Eigen::Index i = 0; i < r; ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            // Block (i, j) must equal block (0, i + j) or (i + j - c + 1, c - 1).
            const Eigen::Index s = i + j;
            const Eigen::Index i0 = std::max<Eigen::Index>(0, s - m.cols() + 1);
            if (m.block(i * n, j, n, 1) != m.block(i0 * n, s - i0, n, 1)) return false;
        }
    return true;
}

int numerical_rank(const Eigen::MatrixXd& m) {
    const auto f = svd(m);
    int k = 0;
    for (Eigen::Index i = 0; i < f.S.size(); ++i)
        if (f.S(i) > 1e-10 * f.S(0)) ++k;
    return k;
}

}  // namespace

TEST_CASE("hankel matrix layout and rank") {
    const Trajectory constant = from_states(Eigen::MatrixXd::Constant(2, 20, 1.5));
    CHECK(numerical_rank(build_hankel(constant, 4, 10).mat) == 1);

    Eigen::MatrixXd powers(1, 6);
    for (int k = 0; k < 6; ++k) powers(0, k) = std::pow(2.0, k);
    const auto h = build_hankel(from_states(powers), 3, 4);
    CHECK(h.mat.rows() == 3);
    CHECK(h.mat.cols() == 4);
    CHECK(numerical_rank(h.mat) == 1);
    CHECK(h.mat(2, 3) == 32.0);

    const Eigen::MatrixXd raw = random_matrix(3, 12, 1);
    CHECK(build_hankel(from_states(raw), 1, 12).mat == raw);

    // First column holds the first r states.
    const auto h5 = build_hankel(from_states(raw), 5, 6);
    for (int i = 0; i < 5; ++i) CHECK(h5.mat.block(3 * i, 0, 3, 1) == raw.col(i));
    CHECK(is_hankel(h5.mat, 3));

    CHECK_THROWS_AS(build_hankel(from_states(raw), 5, 9), ContractViolation);
}

TEST_CASE("hankel projection averages anti-diagonals") {
    const Eigen::MatrixXd m = random_matrix(6, 5, 3);
    const Eigen::MatrixXd p = hankel_project(m, 2);
    CHECK(is_hankel(p, 2));
    // Projection is idempotent.
    CHECK((hankel_project(p, 2) - p).cwiseAbs().maxCoeff() < 1e-15);
    // Entry (0, 0) sits alone on its anti-diagonal.
    CHECK(p.block(0, 0, 2, 1) == m.block(0, 0, 2, 1));
}

TEST_CASE("low-rank relaxation trivial cases and structure") {
    const Trajectory t = from_states(random_matrix(2, 30, 4));
    const auto h = build_hankel(t, 4, 20);
    CHECK(denoise_lowrank(h, 0.0, 10) == h.mat);
    CHECK(denoise_lowrank(h, 0.5, 0) == h.mat);
    for (double lam : {0.01, 0.3, 2.0}) CHECK(is_hankel(denoise_lowrank(h, lam, 7), 2));

    // Several blocks share one SVT step; each stays Hankel.
    const std::vector<HankelMatrix> blocks{h, build_hankel(from_states(random_matrix(2, 30, 5)), 4, 20)};
    for (const auto& b : denoise_lowrank(blocks, 0.2, 5)) CHECK(is_hankel(b, 2));
}

TEST_CASE("low-rank relaxation recovers a planted rank-2 subspace") {
    const Eigen::Matrix2d a = rotation(0.25, 0.99);
    Trajectory t = linear_trajectory(a, Eigen::Vector2d(1.0, 0.0), 60);
    const auto clean = build_hankel(t, 1, 60);
    const Eigen::MatrixXd noise = 1e-5 * random_matrix(1, 60, 6);
    // Scalar observation x1 in a 6-row Hankel matrix: exactly rank 2 without noise.
    Trajectory scalar = from_states(t.states.topRows(1) + noise);
    const auto noisy = build_hankel(scalar, 6, 50);
    Trajectory scalar_clean = from_states(t.states.topRows(1));
    const auto truth = svd(build_hankel(scalar_clean, 6, 50).mat);

    const auto before = svd(noisy.mat);
    const Eigen::MatrixXd out = denoise_lowrank(noisy, 1e-3 * before.S(0), 20);
    const auto after = svd(out);
    CHECK(is_hankel(out, 1));
    // Principal angle between the leading two-dimensional subspaces.
    const Eigen::MatrixXd overlap = truth.U.leftCols(2).transpose() * after.U.leftCols(2);
    const double cos_min = svd(overlap).S.minCoeff();
    CHECK(std::acos(std::min(1.0, cos_min)) < 1e-3);
    (void)clean;
}

TEST_CASE("rank estimation") {
    CHECK(estimate_rank(Eigen::Vector3d(1.0, 1e-14, 1e-15), 3, 10) == 1);
    CHECK(estimate_rank(Eigen::VectorXd::Constant(1, 5.0), 1, 1) == 1);

    const Eigen::MatrixXd low = random_matrix(12, 3, 7) * random_matrix(3, 40, 8);
    const auto f = svd(low);
    CHECK(estimate_rank(f.S, 12, 40) == 3);
    CHECK(estimate_rank(f.S, 12, 40, 1e-9) == 3);

    // Known noise level: planted rank 2 plus small Gaussian noise.
    const double sigma = 1e-3;
    const Eigen::MatrixXd noisy = random_matrix(20, 2, 9) * random_matrix(2, 80, 10) + sigma * random_matrix(20, 80, 11);
    CHECK(estimate_rank(svd(noisy).S, 20, 80, sigma) == 2);
}

TEST_CASE("HAVOK recovers planted linear systems") {
    SUBCASE("scalar decay") {
        Eigen::MatrixXd a(1, 1);
        a << 0.9;
        const auto t = linear_trajectory(a, Eigen::VectorXd::Ones(1), 30);
        const auto res = havok_koopman(build_hankel(t, 1, 30), 1);
        CHECK(std::abs(res.koopman(0, 0) - 0.9) < 1e-8);
    }
    SUBCASE("rotation") {
        const double theta = 0.4;
        const auto t = linear_trajectory(rotation(theta), Eigen::Vector2d(1.0, 0.3), 40);
        const auto res = havok_koopman(build_hankel(t, 1, 40), 2);
        REQUIRE(res.eigs.size() == 2);
        CHECK(std::abs(res.eigs[0] - std::polar(1.0, theta)) < 1e-6);
        CHECK(std::abs(res.eigs[1] - std::polar(1.0, -theta)) < 1e-6);
        CHECK(res.spectral_radius == doctest::Approx(1.0).epsilon(1e-9));
    }
    SUBCASE("fixed point") {
        const auto res = havok_koopman(build_hankel(from_states(Eigen::MatrixXd::Constant(1, 10, 2.0)), 1, 10), 1);
        CHECK(std::abs(res.koopman(0, 0) - 1.0) < 1e-12);
    }
    SUBCASE("random systems up to dimension 5") {
        for (int d = 1; d <= 5; ++d) {
            // Planted spectrum: a real eigenvalue for odd d plus rotation pairs, mixed by a random basis.
            Eigen::MatrixXd block = Eigen::MatrixXd::Zero(d, d);
            std::vector<Complex> planted;
            int i = 0;
            if (d % 2 == 1) {
                block(0, 0) = 0.95;
                planted.emplace_back(0.95, 0.0);
                i = 1;
            }
            for (double theta = 0.3; i < d; i += 2, theta += 0.35) {
                block.block(i, i, 2, 2) = rotation(theta, 0.97);
                planted.push_back(std::polar(0.97, theta));
                planted.push_back(std::polar(0.97, -theta));
            }
            const Eigen::MatrixXd basis = random_matrix(d, d, static_cast<std::uint64_t>(20 + d)) +
                                          3.0 * Eigen::MatrixXd::Identity(d, d);
            const Eigen::MatrixXd a = basis * block * basis.inverse();
            const auto t = linear_trajectory(a, Eigen::VectorXd::Ones(d), 60);
            const auto res = havok_koopman(build_hankel(t, 1, 60), d);
            REQUIRE(static_cast<int>(res.eigs.size()) == d);
            for (const auto& z : planted) {
                double best = 1e9;
                for (const auto& e : res.eigs) best = std::min(best, std::abs(e - z));
                CHECK(best < 1e-6);
            }
        }
    }
}

TEST_CASE("HAVOK prediction and rank warnings") {
    const auto t = linear_trajectory(rotation(0.2), Eigen::Vector2d(1.0, 0.0), 30);
    const auto h = build_hankel(t, 3, 25);
    const auto res = havok_koopman(h, 2);
    const Eigen::MatrixXd pred = res.predict(h.mat.leftCols(24));
    CHECK((pred - h.mat.rightCols(24)).cwiseAbs().maxCoeff() < 1e-8);
    CHECK(res.warnings.empty());
    CHECK_FALSE(havok_koopman(h, 4).warnings.empty());
    CHECK_THROWS_AS(havok_koopman(h, 0), ContractViolation);
}

TEST_CASE("spectrum classification") {
    const std::vector<Complex> two_real{0.9, 0.8};
    auto c = classify_spectrum(two_real, 1e-6);
    CHECK(c.m_r == 2);
    CHECK(c.m_c == 0);

    const std::vector<Complex> mixed{std::polar(0.7, 0.3), 0.95, std::polar(0.7, -0.3)};
    c = classify_spectrum(mixed, 1e-6);
    CHECK(c.m_r == 1);
    CHECK(c.m_c == 2);
    CHECK(c.target_eigs[0] == Complex(0.95, 0.0));
    CHECK(c.target_eigs[1].imag() > 0);
    CHECK(c.target_eigs[2] == std::conj(c.target_eigs[1]));

    const std::vector<Complex> nearly_real{Complex(1.0, 1e-12), Complex(1.0, -1e-12)};
    c = classify_spectrum(nearly_real, 1e-9);
    CHECK(c.m_r == 2);
    CHECK(c.m_c == 0);

    const std::vector<Complex> unpaired{Complex(0.5, 0.5)};
    CHECK_THROWS_AS(classify_spectrum(unpaired, 1e-9), InternalConsistencyError);

    // Counts are conserved on spectra of random matrices.
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto e = eig(random_matrix(7, 7, seed));
        std::vector<Complex> v(e.values.data(), e.values.data() + e.values.size());
        const auto k = classify_spectrum(v, 1e-9);
        CHECK(k.m_r + k.m_c == 7);
        CHECK(k.target_eigs.size() == 7);
    }
}

TEST_CASE("order selection") {
    const std::vector<OrderCandidate> flat{{1, 2, 0.01}, {2, 3, 0.0099}, {3, 3, 0.0098}};
    CHECK(select_order(flat, 5e-4) == 1);
    const std::vector<OrderCandidate> step{{1, 2, 0.02}, {2, 3, 0.005}, {3, 4, 0.0049}};
    CHECK(select_order(step, 5e-4) == 2);
    const std::vector<OrderCandidate> late{{1, 2, 0.02}, {2, 3, 0.0199}, {3, 4, 0.01}};
    CHECK(select_order(late, 5e-4) == 3);
}

TEST_CASE("extraction on the discrete-spectrum and pendulum systems") {
    for (auto kind : {SystemKind::DiscreteSpectrum, SystemKind::Pendulum}) {
        const Dataset data = generate_dataset(SystemSpec::defaults(kind), 60, 4, 250, 2);
        const SpectralConfig sc = extract_spectral(data);
        CHECK(sc.order_r == 1);
        CHECK(sc.order_r >= 1);
        CHECK(sc.order_r <= SpectralOptions{}.r_max);
        if (kind == SystemKind::DiscreteSpectrum) CHECK(sc.summary() == "2 real, 0 complex, order 1");
        if (kind == SystemKind::Pendulum) CHECK(sc.summary() == "0 real, 2 complex, order 1");

        SpectralOptions small;
        small.r_max = 2;
        const int r = estimate_order(data, small);
        CHECK(r >= 1);
        CHECK(r <= 2);
    }
}

TEST_CASE("forced order and spectral json round-trip") {
    const Dataset data = generate_dataset(SystemSpec::defaults(SystemKind::FluidFlowOnAttractor), 40, 2, 250, 1);
    SpectralOptions opts;
    opts.forced_order = 2;
    const SpectralConfig sc = extract_spectral(data, opts);
    CHECK(sc.order_r == 2);
    CHECK(sc.latent_dim() == static_cast<int>(sc.target_eigs.size()));

    const auto path = std::filesystem::temp_directory_path() / "hkoop_test_spectral.json";
    save_spectral(sc, path);
    const SpectralConfig back = load_spectral(path);
    CHECK(back.order_r == sc.order_r);
    CHECK(back.m_r == sc.m_r);
    CHECK(back.m_c == sc.m_c);
    CHECK(back.target_eigs == sc.target_eigs);
    CHECK(back.koopman_init == sc.koopman_init);
    std::filesystem::remove(path);

    CHECK_THROWS_AS(SpectralOptions::from_json({{"r_maks", 3}}), ConfigError);
}
