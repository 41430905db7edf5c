#include "hkoop/dynamics.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

#include "hkoop/errors.hpp"
#include "hkoop/io.hpp"

namespace hkoop {

namespace {

struct SystemEntry {
    SystemKind kind;
    const char* name;
};

constexpr SystemEntry kSystems[] = {
    {SystemKind::DiscreteSpectrum, "discrete-spectrum"},
    {SystemKind::FluidFlowOnAttractor, "fluid-flow"},
    {SystemKind::Pendulum, "pendulum"},
    {SystemKind::Lorenz, "lorenz"},
};

int expected_dim(SystemKind kind) {
    switch (kind) {
        case SystemKind::DiscreteSpectrum:
        case SystemKind::Pendulum: return 2;
        case SystemKind::FluidFlowOnAttractor:
        case SystemKind::Lorenz: return 3;
    }
    return 0;
}

std::vector<std::string> expected_params(SystemKind kind) {
    switch (kind) {
        case SystemKind::DiscreteSpectrum: return {"lambda", "mu"};
        case SystemKind::FluidFlowOnAttractor: return {"A1", "A2", "lambda", "mu", "omega"};
        case SystemKind::Pendulum: return {};
        case SystemKind::Lorenz: return {"beta", "rho", "sigma"};
    }
    return {};
}

// Uniform double in [0, 1) from the top 53 bits; independent of the standard
// library's distribution implementation.
double unit_draw(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

std::mt19937_64 trajectory_stream(std::uint64_t seed, std::uint64_t index) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
    return std::mt19937_64(seq);
}

}  // namespace

std::string system_name(SystemKind kind) {
    for (const auto& e : kSystems)
        if (e.kind == kind) return e.name;
    return "unknown";
}

std::optional<SystemKind> parse_system(std::string_view name) {
    for (const auto& e : kSystems)
        if (name == e.name) return e.kind;
    return std::nullopt;
}

std::vector<std::string> system_names() {
    std::vector<std::string> out;
    for (const auto& e : kSystems) out.emplace_back(e.name);
    return out;
}

SystemSpec SystemSpec::defaults(SystemKind kind) {
    SystemSpec s;
    s.kind = kind;
    s.state_dim = expected_dim(kind);
    switch (kind) {
        case SystemKind::DiscreteSpectrum:
            s.params = {{"mu", -0.05}, {"lambda", -1.0}};
            s.dt = 0.02;
            s.init_box = {{-0.5, 0.5}, {-0.5, 0.5}};
            break;
        case SystemKind::FluidFlowOnAttractor:
            s.params = {{"mu", 0.1}, {"omega", 1.0}, {"lambda", 10.0}, {"A1", -0.1}, {"A2", -0.1}};
            s.dt = 0.02;
            s.init_box = {{-1.1, 1.1}, {-1.1, 1.1}, {0.0, 2.4}};
            break;
        case SystemKind::Pendulum:
            s.dt = 0.02;
            s.init_box = {{-3.1, 3.1}, {-2.0, 2.0}};
            break;
        case SystemKind::Lorenz:
            s.params = {{"sigma", 10.0}, {"rho", 28.0}, {"beta", 8.0 / 3.0}};
            s.dt = 0.01;
            s.init_box = {{-20.0, 20.0}, {-20.0, 20.0}, {10.0, 40.0}};
            s.burn_in = 500;
            break;
    }
    return s;
}

double SystemSpec::param(const std::string& key) const {
    const auto it = params.find(key);
    if (it == params.end()) throw ConfigError("system " + system_name(kind) + " has no parameter '" + key + "'");
    return it->second;
}

void SystemSpec::validate() const {
    if (state_dim != expected_dim(kind))
        throw ConfigError("state_dim " + std::to_string(state_dim) + " does not match system " + system_name(kind));
    if (!(dt > 0.0) || !std::isfinite(dt)) throw ConfigError("dt must be positive");
    if (static_cast<int>(init_box.size()) != state_dim) throw ConfigError("init_box needs one interval per dimension");
    for (const auto& [lo, hi] : init_box)
        if (!(lo <= hi)) throw ConfigError("init_box interval is empty");
    if (burn_in < 0) throw ConfigError("burn_in must be nonnegative");
    const auto names = expected_params(kind);
    if (params.size() != names.size()) throw ConfigError("wrong parameter set for " + system_name(kind));
    for (const auto& n : names)
        if (!params.count(n)) throw ConfigError("missing parameter '" + n + "' for " + system_name(kind));
}

Eigen::VectorXd vector_field(const SystemSpec& spec, const Eigen::VectorXd& x) {
    if (x.size() != spec.state_dim)
        throw ContractViolation("vector_field: state has dimension " + std::to_string(x.size()) + ", expected " +
                                std::to_string(spec.state_dim));
    Eigen::VectorXd dx(x.size());
    switch (spec.kind) {
        case SystemKind::DiscreteSpectrum: {
            const double mu = spec.param("mu");
            const double lambda = spec.param("lambda");
            dx << mu * x(0), lambda * (x(1) - x(0) * x(0));
            break;
        }
        case SystemKind::FluidFlowOnAttractor: {
            const double mu = spec.param("mu");
            const double omega = spec.param("omega");
            const double lambda = spec.param("lambda");
            const double a1 = spec.param("A1");
            const double a2 = spec.param("A2");
            dx << mu * x(0) - omega * x(1) + a1 * x(2), omega * x(0) + mu * x(1) + a2 * x(2),
                -lambda * (x(2) - x(0) * x(0) - x(1) * x(1));
            break;
        }
        case SystemKind::Pendulum: dx << x(1), -std::sin(x(0)); break;
        case SystemKind::Lorenz: {
            const double sigma = spec.param("sigma");
            const double rho = spec.param("rho");
            const double beta = spec.param("beta");
            dx << sigma * (x(1) - x(0)), x(0) * (rho - x(2)) - x(1), x(0) * x(1) - beta * x(2);
            break;
        }
    }
    return dx;
}

Eigen::VectorXd rk4_step(const SystemSpec& spec, const Eigen::VectorXd& x, std::size_t step_index) {
    if (!x.allFinite()) throw DivergenceError("rk4_step: non-finite input state", step_index);
    const double h = spec.dt;
    const Eigen::VectorXd k1 = vector_field(spec, x);
    const Eigen::VectorXd k2 = vector_field(spec, x + 0.5 * h * k1);
    const Eigen::VectorXd k3 = vector_field(spec, x + 0.5 * h * k2);
    const Eigen::VectorXd k4 = vector_field(spec, x + h * k3);
    Eigen::VectorXd next = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    if (!next.allFinite()) throw DivergenceError("rk4_step: integration diverged", step_index);
    return next;
}

Trajectory integrate(const SystemSpec& spec, const Eigen::VectorXd& x0, int length) {
    if (length < 2) throw ContractViolation("integrate: trajectory length must be >= 2");
    Eigen::VectorXd x = x0;
    std::size_t step = 0;
    for (int i = 0; i < spec.burn_in; ++i) x = rk4_step(spec, x, step++);
    Trajectory t;
    t.dt = spec.dt;
    t.system = spec.kind;
    t.states.resize(spec.state_dim, length);
    t.states.col(0) = x;
    for (int k = 1; k < length; ++k) {
        x = rk4_step(spec, x, step++);
        t.states.col(k) = x;
    }
    return t;
}

Normalization Normalization::fit(const std::vector<Trajectory>& trajs) {
    if (trajs.empty()) throw ContractViolation("Normalization::fit: no trajectories");
    const Eigen::Index n = trajs.front().dim();
    Eigen::VectorXd lo = Eigen::VectorXd::Constant(n, std::numeric_limits<double>::infinity());
    Eigen::VectorXd hi = -lo;
    for (const auto& t : trajs) {
        lo = lo.cwiseMin(t.states.rowwise().minCoeff());
        hi = hi.cwiseMax(t.states.rowwise().maxCoeff());
    }
    Normalization out;
    out.shift = 0.5 * (lo + hi);
    out.scale.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) out.scale(i) = hi(i) > lo(i) ? 2.0 / (hi(i) - lo(i)) : 1.0;
    return out;
}

Normalization Normalization::identity(int dim) {
    return {Eigen::VectorXd::Ones(dim), Eigen::VectorXd::Zero(dim)};
}

Eigen::MatrixXd Normalization::apply(const Eigen::MatrixXd& x) const {
    return (x.colwise() - shift).array().colwise() * scale.array();
}

Eigen::MatrixXd Normalization::invert(const Eigen::MatrixXd& x) const {
    Eigen::MatrixXd out = x.array().colwise() / scale.array();
    return out.colwise() + shift;
}

Trajectory Normalization::apply(const Trajectory& t) const {
    Trajectory out = t;
    out.states = apply(t.states);
    return out;
}

std::vector<Trajectory> Dataset::normalized_train() const {
    std::vector<Trajectory> out;
    out.reserve(train.size());
    for (const auto& t : train) out.push_back(normalization.apply(t));
    return out;
}

std::vector<Trajectory> Dataset::normalized_test() const {
    std::vector<Trajectory> out;
    out.reserve(test.size());
    for (const auto& t : test) out.push_back(normalization.apply(t));
    return out;
}

Dataset generate_dataset(const SystemSpec& spec, int n_train, int n_test, int traj_len, std::uint64_t seed) {
    spec.validate();
    if (n_train < 1 || n_test < 1) throw ConfigError("generate_dataset: n_train and n_test must be >= 1");
    if (traj_len < 2) throw ConfigError("generate_dataset: traj_len must be >= 2");

    constexpr int kMaxConsecutiveResamples = 100;
    Dataset data;
    data.spec = spec;
    data.seed = seed;
    const int total = n_train + n_test;
    for (int idx = 0; idx < total; ++idx) {
        auto rng = trajectory_stream(seed, static_cast<std::uint64_t>(idx));
        int failures = 0;
        for (;;) {
            Eigen::VectorXd x0(spec.state_dim);
            for (int d = 0; d < spec.state_dim; ++d) {
                const auto [lo, hi] = spec.init_box[static_cast<std::size_t>(d)];
                x0(d) = lo + (hi - lo) * unit_draw(rng);
            }
            try {
                Trajectory t = integrate(spec, x0, traj_len);
                (idx < n_train ? data.train : data.test).push_back(std::move(t));
                break;
            } catch (const DivergenceError&) {
                ++data.resamples;
                if (++failures > kMaxConsecutiveResamples)
                    throw ConfigError("generate_dataset: more than 100 consecutive divergent initial conditions for " +
                                      system_name(spec.kind));
            }
        }
    }
    data.normalization = Normalization::fit(data.train);
    return data;
}

namespace {

std::string trajectories_csv(const std::vector<Trajectory>& trajs, int dim) {
    std::ostringstream out;
    out << "traj_id,step";
    for (int d = 0; d < dim; ++d) out << ",x" << (d + 1);
    out << '\n';
    for (std::size_t i = 0; i < trajs.size(); ++i) {
        const auto& s = trajs[i].states;
        for (Eigen::Index k = 0; k < s.cols(); ++k) {
            out << i << ',' << k;
            for (Eigen::Index d = 0; d < s.rows(); ++d) out << ',' << format_double(s(d, k));
            out << '\n';
        }
    }
    return out.str();
}

std::vector<Trajectory> parse_trajectories(const std::filesystem::path& path, const SystemSpec& spec) {
    std::istringstream in(read_file(path));
    std::string line;
    if (!std::getline(in, line)) throw ConfigError("empty dataset file " + path.string());
    std::vector<std::vector<Eigen::VectorXd>> cols;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream row(line);
        std::string cell;
        std::vector<double> vals;
        while (std::getline(row, cell, ',')) {
            try {
                vals.push_back(std::stod(cell));
            } catch (const std::exception&) {
                throw ConfigError(path.string() + ":" + std::to_string(line_no) + ": bad number '" + cell + "'");
            }
        }
        if (static_cast<int>(vals.size()) != spec.state_dim + 2)
            throw ConfigError(path.string() + ":" + std::to_string(line_no) + ": wrong column count");
        const auto id = static_cast<std::size_t>(vals[0]);
        const auto step = static_cast<std::size_t>(vals[1]);
        if (id >= cols.size()) cols.resize(id + 1);
        if (step != cols[id].size())
            throw ConfigError(path.string() + ":" + std::to_string(line_no) + ": steps out of order");
        cols[id].push_back(Eigen::Map<const Eigen::VectorXd>(vals.data() + 2, spec.state_dim));
    }
    std::vector<Trajectory> out;
    for (const auto& c : cols) {
        Trajectory t;
        t.dt = spec.dt;
        t.system = spec.kind;
        t.states.resize(spec.state_dim, static_cast<Eigen::Index>(c.size()));
        for (std::size_t k = 0; k < c.size(); ++k) t.states.col(static_cast<Eigen::Index>(k)) = c[k];
        out.push_back(std::move(t));
    }
    return out;
}

std::vector<double> to_std(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

}  // namespace

void save_dataset(const Dataset& data, const std::filesystem::path& dir) {
    const int dim = data.spec.state_dim;
    atomic_write(dir / "train.csv", trajectories_csv(data.train, dim));
    atomic_write(dir / "test.csv", trajectories_csv(data.test, dim));
    nlohmann::json j;
    j["system"] = system_name(data.spec.kind);
    j["params"] = data.spec.params;
    j["state_dim"] = dim;
    j["dt"] = data.spec.dt;
    j["init_box"] = data.spec.init_box;
    j["burn_in"] = data.spec.burn_in;
    j["seed"] = data.seed;
    j["n_train"] = data.train.size();
    j["n_test"] = data.test.size();
    j["traj_len"] = data.train.empty() ? 0 : data.train.front().length();
    j["normalization"] = {{"scale", to_std(data.normalization.scale)}, {"shift", to_std(data.normalization.shift)}};
    j["resamples"] = data.resamples;
    write_json(dir / "dataset.json", j);
}

Dataset load_dataset(const std::filesystem::path& dir) {
    if (!std::filesystem::exists(dir / "dataset.json")) throw ConfigError("no dataset found in " + dir.string());
    const auto j = read_json(dir / "dataset.json");
    Dataset data;
    try {
        const auto kind = parse_system(j.at("system").get<std::string>());
        if (!kind) throw ConfigError("unknown system in dataset.json");
        data.spec.kind = *kind;
        data.spec.params = j.at("params").get<std::map<std::string, double>>();
        data.spec.state_dim = j.at("state_dim").get<int>();
        data.spec.dt = j.at("dt").get<double>();
        data.spec.init_box = j.at("init_box").get<std::vector<std::pair<double, double>>>();
        data.spec.burn_in = j.at("burn_in").get<int>();
        data.seed = j.at("seed").get<std::uint64_t>();
        data.resamples = j.at("resamples").get<int>();
        const auto scale = j.at("normalization").at("scale").get<std::vector<double>>();
        const auto shift = j.at("normalization").at("shift").get<std::vector<double>>();
        data.normalization.scale = Eigen::Map<const Eigen::VectorXd>(scale.data(), static_cast<Eigen::Index>(scale.size()));
        data.normalization.shift = Eigen::Map<const Eigen::VectorXd>(shift.data(), static_cast<Eigen::Index>(shift.size()));
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("dataset.json: ") + e.what());
    }
    data.spec.validate();
    data.train = parse_trajectories(dir / "train.csv", data.spec);
    data.test = parse_trajectories(dir / "test.csv", data.spec);
    return data;
}

}  // namespace hkoop
