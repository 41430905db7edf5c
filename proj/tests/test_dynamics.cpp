#include <doctest.h>

#include <filesystem>

#include "hkoop/dynamics.hpp"
#include "hkoop/errors.hpp"

using namespace hkoop;

namespace {

std::filesystem::path scratch_dir(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("hkoop_test_" + name);
    std::filesystem::remove_all(p);
    return p;
}

}  // namespace

TEST_CASE("system names round-trip") {
    CHECK(system_names().size() == 4);
    for (const auto& n : system_names()) CHECK(system_name(*parse_system(n)) == n);
    CHECK_FALSE(parse_system("bogus"));
}

TEST_CASE("vector field fixed points") {
    const auto lorenz = SystemSpec::defaults(SystemKind::Lorenz);
    const double beta = 8.0 / 3.0, rho = 28.0;
    const double c = std::sqrt(beta * (rho - 1.0));
    CHECK(vector_field(lorenz, Eigen::Vector3d(c, c, rho - 1.0)).norm() < 1e-12);
    CHECK(vector_field(lorenz, Eigen::Vector3d(-c, -c, rho - 1.0)).norm() < 1e-12);

    const auto pend = SystemSpec::defaults(SystemKind::Pendulum);
    CHECK(vector_field(pend, Eigen::Vector2d::Zero()).norm() == 0.0);

    // The slow manifold x2 = x1^2 of the discrete-spectrum system is invariant:
    // there x2' = lambda (x2 - x1^2) = 0 and d(x1^2)/dt = 2 mu x1^2 = x2' only if tangent.
    const auto ds = SystemSpec::defaults(SystemKind::DiscreteSpectrum);
    const Eigen::Vector2d on(0.3, 0.09);
    const Eigen::VectorXd f = vector_field(ds, on);
    CHECK(f(0) == doctest::Approx(-0.05 * 0.3));
    CHECK(std::abs(f(1)) < 1e-15);

    CHECK_THROWS_AS(vector_field(ds, Eigen::Vector3d::Zero()), ContractViolation);
}

TEST_CASE("rk4 matches closed-form exponential decay") {
    auto spec = SystemSpec::defaults(SystemKind::DiscreteSpectrum);
    spec.params["mu"] = -1.0;
    spec.params["lambda"] = -1.0;
    spec.dt = 0.01;
    const Eigen::VectorXd next = rk4_step(spec, Eigen::Vector2d(1.0, 1.0));
    CHECK(std::abs(next(0) - std::exp(-0.01)) < 1e-10);

    spec.params["mu"] = 0.0;
    spec.params["lambda"] = 0.0;
    const Eigen::Vector2d x(0.4, -0.2);
    CHECK(rk4_step(spec, x) == Eigen::VectorXd(x));
}

TEST_CASE("pendulum energy is conserved") {
    const auto spec = SystemSpec::defaults(SystemKind::Pendulum);
    const Trajectory t = integrate(spec, Eigen::Vector2d(1.0, 0.5), 1001);
    auto energy = [&](Eigen::Index k) { return 0.5 * t.states(1, k) * t.states(1, k) - std::cos(t.states(0, k)); };
    const double e0 = energy(0);
    double drift = 0.0;
    for (Eigen::Index k = 0; k < t.length(); ++k) drift = std::max(drift, std::abs(energy(k) - e0));
    CHECK(drift < 1e-6);
}

TEST_CASE("discrete-spectrum trajectory matches its closed-form solution") {
    const auto spec = SystemSpec::defaults(SystemKind::DiscreteSpectrum);
    const double mu = -0.05, lambda = -1.0, dt = 0.02;
    const Eigen::Vector2d x0(0.4, -0.3);
    const Trajectory t = integrate(spec, x0, 51);
    const double c = lambda * x0(0) * x0(0) / (lambda - 2.0 * mu);
    double worst = 0.0;
    for (Eigen::Index k = 0; k <= 50; ++k) {
        const double s = dt * static_cast<double>(k);
        const double x1 = x0(0) * std::exp(mu * s);
        const double x2 = (x0(1) - c) * std::exp(lambda * s) + c * std::exp(2.0 * mu * s);
        worst = std::max({worst, std::abs(t.states(0, k) - x1), std::abs(t.states(1, k) - x2)});
    }
    CHECK(worst < 1e-6);
}

TEST_CASE("lorenz trajectories stay bounded") {
    const auto spec = SystemSpec::defaults(SystemKind::Lorenz);
    const Trajectory t = integrate(spec, Eigen::Vector3d(1.0, 1.0, 20.0), 10000);
    CHECK(t.states.cwiseAbs().maxCoeff() < 100.0);
    CHECK(t.states.allFinite());
}

TEST_CASE("dataset generation is deterministic and reproducible") {
    const auto spec = SystemSpec::defaults(SystemKind::FluidFlowOnAttractor);
    const Dataset a = generate_dataset(spec, 5, 2, 40, 11);
    const Dataset b = generate_dataset(spec, 5, 2, 40, 11);
    REQUIRE(a.train.size() == 5);
    REQUIRE(a.test.size() == 2);
    for (std::size_t i = 0; i < 5; ++i) CHECK(a.train[i].states == b.train[i].states);

    // Seven distinct initial conditions.
    std::vector<Eigen::VectorXd> starts;
    for (const auto& t : a.train) starts.push_back(t.states.col(0));
    for (const auto& t : a.test) starts.push_back(t.states.col(0));
    for (std::size_t i = 0; i < starts.size(); ++i)
        for (std::size_t j = i + 1; j < starts.size(); ++j) CHECK(starts[i] != starts[j]);

    // Re-integrating from the first state reproduces each trajectory exactly.
    for (const auto& t : a.train) CHECK(integrate(spec, t.states.col(0), 40).states == t.states);

    const Dataset c = generate_dataset(spec, 5, 2, 40, 12);
    CHECK(c.train[0].states != a.train[0].states);
}

TEST_CASE("normalization maps training data into [-1, 1] and inverts") {
    const auto spec = SystemSpec::defaults(SystemKind::Lorenz);
    const Dataset d = generate_dataset(spec, 4, 1, 60, 3);
    const auto train = d.normalized_train();
    double lo = 1e9, hi = -1e9;
    for (const auto& t : train) {
        lo = std::min(lo, t.states.minCoeff());
        hi = std::max(hi, t.states.maxCoeff());
    }
    CHECK(lo == doctest::Approx(-1.0));
    CHECK(hi == doctest::Approx(1.0));
    const Eigen::MatrixXd raw = d.test[0].states;
    CHECK((d.normalization.invert(d.normalization.apply(raw)) - raw).cwiseAbs().maxCoeff() < 1e-12 * raw.cwiseAbs().maxCoeff());
}

TEST_CASE("dataset files round-trip") {
    const auto dir = scratch_dir("dataset_roundtrip");
    const auto spec = SystemSpec::defaults(SystemKind::Pendulum);
    const Dataset d = generate_dataset(spec, 3, 2, 25, 5);
    save_dataset(d, dir);
    const Dataset e = load_dataset(dir);
    CHECK(e.spec.kind == SystemKind::Pendulum);
    CHECK(e.seed == 5);
    REQUIRE(e.train.size() == 3);
    REQUIRE(e.test.size() == 2);
    for (std::size_t i = 0; i < 3; ++i) CHECK(e.train[i].states == d.train[i].states);
    CHECK(e.normalization.scale == d.normalization.scale);
    CHECK(e.normalization.shift == d.normalization.shift);
    std::filesystem::remove_all(dir);
}

TEST_CASE("invalid system specifications are rejected") {
    auto spec = SystemSpec::defaults(SystemKind::Lorenz);
    spec.params.erase("rho");
    CHECK_THROWS_AS(spec.validate(), ConfigError);
    auto bad_dt = SystemSpec::defaults(SystemKind::Pendulum);
    bad_dt.dt = -1.0;
    CHECK_THROWS_AS(bad_dt.validate(), ConfigError);
}
