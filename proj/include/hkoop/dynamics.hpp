#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace hkoop {

enum class SystemKind { DiscreteSpectrum, FluidFlowOnAttractor, Pendulum, Lorenz };

/// CLI-facing name ("discrete-spectrum", "fluid-flow", "pendulum", "lorenz").
std::string system_name(SystemKind kind);
std::optional<SystemKind> parse_system(std::string_view name);
std::vector<std::string> system_names();

struct SystemSpec {
    SystemKind kind = SystemKind::DiscreteSpectrum;
    std::map<std::string, double> params;
    int state_dim = 2;
    double dt = 0.02;
    std::vector<std::pair<double, double>> init_box;
    // Steps integrated and discarded before recording (puts Lorenz on its attractor).
    int burn_in = 0;

    static SystemSpec defaults(SystemKind kind);

    double param(const std::string& key) const;
    /// Throws ConfigError when dims, dt, box or parameter names are inconsistent.
    void validate() const;
};

/// States are stored column-wise: states.col(k) is x_k.
struct Trajectory {
    Eigen::MatrixXd states;
    double dt = 0.0;
    SystemKind system = SystemKind::DiscreteSpectrum;

    Eigen::Index length() const { return states.cols(); }
    Eigen::Index dim() const { return states.rows(); }
};

/// Per-dimension affine map onto [-1, 1]: normalized = (x - shift) .* scale.
struct Normalization {
    Eigen::VectorXd scale;
    Eigen::VectorXd shift;

    static Normalization fit(const std::vector<Trajectory>& trajs);
    static Normalization identity(int dim);

    Eigen::MatrixXd apply(const Eigen::MatrixXd& x) const;
    Eigen::MatrixXd invert(const Eigen::MatrixXd& x) const;
    Trajectory apply(const Trajectory& t) const;
};

struct Dataset {
    SystemSpec spec;
    std::vector<Trajectory> train;
    std::vector<Trajectory> test;
    std::uint64_t seed = 0;
    Normalization normalization;
    int resamples = 0;

    std::vector<Trajectory> normalized_train() const;
    std::vector<Trajectory> normalized_test() const;
};

Eigen::VectorXd vector_field(const SystemSpec& spec, const Eigen::VectorXd& x);

/// One classical RK4 step of size spec.dt. Throws DivergenceError carrying
/// step_index when the result is not finite.
Eigen::VectorXd rk4_step(const SystemSpec& spec, const Eigen::VectorXd& x, std::size_t step_index = 0);

/// Integrates `length` states starting from x0 (after spec.burn_in discarded steps).
Trajectory integrate(const SystemSpec& spec, const Eigen::VectorXd& x0, int length);

/// Initial conditions are drawn from spec.init_box with a per-trajectory stream
/// seeded by (seed, index); diverging draws are resampled from the same stream.
Dataset generate_dataset(const SystemSpec& spec, int n_train, int n_test, int traj_len, std::uint64_t seed);

/// train.csv / test.csv (traj_id,step,x1..xn) plus dataset.json.
void save_dataset(const Dataset& data, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace hkoop
