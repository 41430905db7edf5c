#include "hkoop/spectral.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <sstream>

#include "hkoop/errors.hpp"
#include "hkoop/io.hpp"
#include "hkoop/numcore.hpp"

namespace hkoop {

HankelMatrix build_hankel(const Trajectory& traj, int r, int q, int start) {
    if (r < 1 || q < 1 || start < 0) throw ContractViolation("build_hankel: r and q must be >= 1");
    const Eigen::Index need = static_cast<Eigen::Index>(start) + r + q - 1;
    if (traj.length() < need)
        throw ContractViolation("build_hankel: trajectory has " + std::to_string(traj.length()) +
                                " states, needs at least " + std::to_string(need));
    const auto n = static_cast<int>(traj.dim());
    HankelMatrix h;
    h.r = r;
    h.q = q;
    h.state_dim = n;
    h.mat.resize(static_cast<Eigen::Index>(r) * n, q);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < q; ++j) h.mat.block(i * n, j, n, 1) = traj.states.col(start + i + j);
    return h;
}

Eigen::MatrixXd hankel_project(const Eigen::MatrixXd& m, int state_dim) {
    const auto n = static_cast<Eigen::Index>(state_dim);
    const Eigen::Index r = m.rows() / n;
    const Eigen::Index c = m.cols();
    Eigen::MatrixXd out(m.rows(), c);
    for (Eigen::Index s = 0; s < r + c - 1; ++s) {
        const Eigen::Index i_lo = std::max<Eigen::Index>(0, s - c + 1);
        const Eigen::Index i_hi = std::min<Eigen::Index>(r - 1, s);
        Eigen::VectorXd avg = Eigen::VectorXd::Zero(n);
        for (Eigen::Index i = i_lo; i <= i_hi; ++i) avg += m.block(i * n, s - i, n, 1);
        avg /= static_cast<double>(i_hi - i_lo + 1);
        for (Eigen::Index i = i_lo; i <= i_hi; ++i) out.block(i * n, s - i, n, 1) = avg;
    }
    return out;
}

namespace {

Eigen::MatrixXd hconcat(std::span<const Eigen::MatrixXd> blocks) {
    Eigen::Index cols = 0;
    for (const auto& b : blocks) cols += b.cols();
    Eigen::MatrixXd out(blocks.empty() ? 0 : blocks.front().rows(), cols);
    Eigen::Index at = 0;
    for (const auto& b : blocks) {
        out.middleCols(at, b.cols()) = b;
        at += b.cols();
    }
    return out;
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

std::vector<Eigen::MatrixXd> denoise_lowrank(std::span<const HankelMatrix> blocks, double lam, int iters) {
    if (lam < 0.0) throw ContractViolation("denoise_lowrank: lam must be nonnegative");
    std::vector<Eigen::MatrixXd> cur;
    cur.reserve(blocks.size());
    for (const auto& b : blocks) cur.push_back(b.mat);
    if (lam == 0.0 || iters <= 0 || blocks.empty()) return cur;
    const int n = blocks.front().state_dim;

    for (int it = 0; it < iters; ++it) {
        const auto f = svd(hconcat(cur));
        const Eigen::VectorXd shrunk = (f.S.array() - lam).cwiseMax(0.0);
        const Eigen::MatrixXd low = f.U * shrunk.asDiagonal() * f.V.transpose();
        Eigen::Index at = 0;
        for (auto& c : cur) {
            c = hankel_project(low.middleCols(at, c.cols()), n);
            at += c.cols();
        }
    }
    return cur;
}

Eigen::MatrixXd denoise_lowrank(const HankelMatrix& h, double lam, int iters) {
    return denoise_lowrank(std::span<const HankelMatrix>(&h, 1), lam, iters).front();
}

int estimate_rank(const Eigen::VectorXd& s, Eigen::Index rows, Eigen::Index cols, std::optional<double> noise_sigma) {
    if (s.size() == 0) throw ContractViolation("estimate_rank: no singular values");
    const double small = static_cast<double>(std::min(rows, cols));
    const double large = static_cast<double>(std::max(rows, cols));
    const double beta = small / large;

    double tau = 0.0;
    if (noise_sigma) {
        const double lambda_star =
            std::sqrt(2.0 * (beta + 1.0) + 8.0 * beta / ((beta + 1.0) + std::sqrt(beta * beta + 14.0 * beta + 1.0)));
        tau = lambda_star * std::sqrt(large) * *noise_sigma;
    } else {
        const double omega = 0.56 * beta * beta * beta - 0.95 * beta * beta + 1.82 * beta + 1.43;
        tau = omega * median({s.data(), s.data() + s.size()});
    }
    const double floor = s(0) * large * std::numeric_limits<double>::epsilon();
    const double cut = std::max(tau, floor);
    int rank = 0;
    for (Eigen::Index i = 0; i < s.size(); ++i)
        if (s(i) > cut) ++rank;
    return std::max(rank, 1);
}

Eigen::MatrixXd HavokResult::predict(const Eigen::MatrixXd& delay_vectors) const {
    const Eigen::VectorXd sk = singular_values.head(koopman.rows());
    const Eigen::MatrixXd coords = sk.cwiseInverse().asDiagonal() * (basis.transpose() * delay_vectors);
    return basis * (sk.asDiagonal() * (koopman * coords));
}

HavokResult havok_koopman(std::span<const Eigen::MatrixXd> blocks, int rank) {
    if (blocks.empty()) throw ContractViolation("havok_koopman: no data");
    const Eigen::MatrixXd all = hconcat(blocks);
    if (rank < 1 || rank > std::min(all.rows(), all.cols()))
        throw ContractViolation("havok_koopman: rank must lie in [1, min(rows, cols)]");
    const auto f = svd(all);

    HavokResult out;
    out.singular_values = f.S;
    out.basis = f.U.leftCols(rank);
    if (!(f.S(rank - 1) > 1e-10 * f.S(0)))
        out.warnings.push_back("requested rank " + std::to_string(rank) + " exceeds numerical rank");

    Eigen::Index pairs = 0;
    for (const auto& b : blocks) pairs += std::max<Eigen::Index>(0, b.cols() - 1);
    if (pairs == 0) throw ContractViolation("havok_koopman: every block needs at least two columns");
    Eigen::MatrixXd now(pairs, rank);
    Eigen::MatrixXd next(pairs, rank);
    Eigen::Index col = 0;
    Eigen::Index row = 0;
    for (const auto& b : blocks) {
        for (Eigen::Index j = 0; j + 1 < b.cols(); ++j, ++row) {
            now.row(row) = f.V.row(col + j).head(rank);
            next.row(row) = f.V.row(col + j + 1).head(rank);
        }
        col += b.cols();
    }
    // next ~= now * K^T
    out.koopman = lstsq(now, next).transpose();
    const auto e = eig(out.koopman);
    for (Eigen::Index i = 0; i < e.values.size(); ++i) {
        out.eigs.push_back(e.values(i));
        out.spectral_radius = std::max(out.spectral_radius, std::abs(e.values(i)));
    }
    return out;
}

HavokResult havok_koopman(const HankelMatrix& h, int rank) {
    return havok_koopman(std::span<const Eigen::MatrixXd>(&h.mat, 1), rank);
}

namespace {

bool magnitude_first(const Complex& a, const Complex& b) {
    if (std::abs(a) != std::abs(b)) return std::abs(a) > std::abs(b);
    if (a.real() != b.real()) return a.real() > b.real();
    return a.imag() > b.imag();
}

}  // namespace

SpectrumClass classify_spectrum(std::span<const Complex> eigs, double tol_imag) {
    std::vector<double> reals;
    std::vector<Complex> upper;
    std::vector<Complex> lower;
    for (const auto& z : eigs) {
        if (std::abs(z.imag()) <= tol_imag * std::max(1.0, std::abs(z)))
            reals.push_back(z.real());
        else
            (z.imag() > 0 ? upper : lower).push_back(z);
    }
    if (upper.size() != lower.size())
        throw InternalConsistencyError("classify_spectrum: eigenvalue list is not closed under conjugation");

    std::sort(reals.begin(), reals.end(), [](double a, double b) {
        return std::abs(a) != std::abs(b) ? std::abs(a) > std::abs(b) : a > b;
    });
    std::sort(upper.begin(), upper.end(), magnitude_first);

    SpectrumClass out;
    out.m_r = static_cast<int>(reals.size());
    out.m_c = static_cast<int>(2 * upper.size());
    for (double v : reals) out.target_eigs.emplace_back(v, 0.0);

    std::vector<bool> used(lower.size(), false);
    for (const auto& z : upper) {
        std::size_t best = lower.size();
        double best_dist = std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < lower.size(); ++j) {
            if (used[j]) continue;
            const double d = std::abs(z - std::conj(lower[j]));
            if (d < best_dist) {
                best_dist = d;
                best = j;
            }
        }
        if (best == lower.size()) throw InternalConsistencyError("classify_spectrum: unpaired complex eigenvalue");
        used[best] = true;
        out.target_eigs.push_back(z);
        out.target_eigs.push_back(lower[best]);
    }
    return out;
}

nlohmann::json SpectralOptions::to_json() const {
    nlohmann::json j = {{"r_max", r_max},
                        {"tol_improve", tol_improve},
                        {"lam_rel", lam_rel},
                        {"denoise_iters", denoise_iters},
                        {"tol_imag", tol_imag},
                        {"subset_trajectories", subset_trajectories},
                        {"heldout_trajectories", heldout_trajectories},
                        {"window_q", window_q}};
    j["forced_order"] = forced_order ? nlohmann::json(*forced_order) : nlohmann::json(nullptr);
    return j;
}

SpectralOptions SpectralOptions::from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("spectral options must be a JSON object");
    SpectralOptions o;
    try {
        for (const auto& [key, v] : j.items()) {
            if (key == "r_max") o.r_max = v.get<int>();
            else if (key == "tol_improve") o.tol_improve = v.get<double>();
            else if (key == "lam_rel") o.lam_rel = v.get<double>();
            else if (key == "denoise_iters") o.denoise_iters = v.get<int>();
            else if (key == "tol_imag") o.tol_imag = v.get<double>();
            else if (key == "subset_trajectories") o.subset_trajectories = v.get<int>();
            else if (key == "heldout_trajectories") o.heldout_trajectories = v.get<int>();
            else if (key == "window_q") o.window_q = v.get<int>();
            else if (key == "forced_order") o.forced_order = v.is_null() ? std::nullopt : std::optional<int>(v.get<int>());
            else throw ConfigError("unknown spectral option '" + key + "'");
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("spectral options: ") + e.what());
    }
    return o;
}

namespace {

struct ExtractionData {
    std::vector<Trajectory> subset;
    std::vector<Trajectory> heldout;
    bool heldout_is_tail = false;
};

ExtractionData extraction_data(const Dataset& data, const SpectralOptions& opts) {
    if (opts.subset_trajectories < 1 || opts.window_q < 1) throw ConfigError("spectral: subset and window must be >= 1");
    const auto train = data.normalized_train();
    if (train.empty()) throw ConfigError("spectral: empty training set");
    ExtractionData out;
    const std::size_t n_sub = std::min<std::size_t>(train.size(), static_cast<std::size_t>(opts.subset_trajectories));
    const std::size_t n_held =
        std::min<std::size_t>(train.size() - n_sub, static_cast<std::size_t>(std::max(0, opts.heldout_trajectories)));
    out.subset.assign(train.begin(), train.begin() + static_cast<std::ptrdiff_t>(n_sub));
    out.heldout.assign(train.begin() + static_cast<std::ptrdiff_t>(n_sub),
                       train.begin() + static_cast<std::ptrdiff_t>(n_sub + n_held));
    out.heldout_is_tail = out.heldout.empty();
    return out;
}

// Each block holds window_q + 1 delay vectors so consecutive pairs cover window_q steps.
std::vector<HankelMatrix> subset_blocks(const ExtractionData& d, int order, int q) {
    std::vector<HankelMatrix> out;
    for (const auto& t : d.subset) out.push_back(build_hankel(t, order, q + 1));
    return out;
}

std::vector<Eigen::MatrixXd> heldout_blocks(const ExtractionData& d, int order, int q) {
    std::vector<Eigen::MatrixXd> out;
    if (!d.heldout_is_tail) {
        for (const auto& t : d.heldout) out.push_back(build_hankel(t, order, q + 1).mat);
        return out;
    }
    const int start = q + 1;
    for (const auto& t : d.subset) {
        const auto avail = static_cast<int>(t.length()) - start - order + 1;
        const int cols = std::min(q + 1, avail);
        if (cols < 2)
            throw ConfigError("spectral: trajectories too short for a held-out window at order " + std::to_string(order));
        out.push_back(build_hankel(t, order, cols, start).mat);
    }
    return out;
}

double heldout_residual(const HavokResult& fit, std::span<const Eigen::MatrixXd> blocks) {
    double err = 0.0;
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(blocks.front().rows());
    Eigen::Index count = 0;
    for (const auto& b : blocks) {
        const Eigen::MatrixXd pred = fit.predict(b.leftCols(b.cols() - 1));
        err += (b.rightCols(b.cols() - 1) - pred).squaredNorm();
        mean += b.rightCols(b.cols() - 1).rowwise().sum();
        count += b.cols() - 1;
    }
    mean /= static_cast<double>(count);
    double var = 0.0;
    for (const auto& b : blocks) var += (b.rightCols(b.cols() - 1).colwise() - mean).squaredNorm();
    return var > 0.0 ? err / var : err;
}

// Window length actually used: window_q, shortened to fit the available trajectories.
int effective_window(const ExtractionData& d, int order, int q) {
    Eigen::Index shortest = std::numeric_limits<Eigen::Index>::max();
    for (const auto& t : d.subset) shortest = std::min(shortest, t.length());
    for (const auto& t : d.heldout) shortest = std::min(shortest, t.length());
    // Without separate held-out trajectories the held-out window follows the fitting window.
    const Eigen::Index room = d.heldout_is_tail ? (shortest - order) / 2 : shortest - order;
    if (room < 2)
        throw ConfigError("spectral: trajectories of " + std::to_string(shortest) + " states are too short for order " +
                          std::to_string(order));
    return static_cast<int>(std::min<Eigen::Index>(q, room));
}

}  // namespace

CandidateFit fit_order_candidate(const Dataset& data, int order, const SpectralOptions& opts) {
    if (order < 1) throw ConfigError("spectral: order must be >= 1");
    const auto d = extraction_data(data, opts);
    const int q = effective_window(d, order, opts.window_q);
    const auto blocks = subset_blocks(d, order, q);

    std::vector<Eigen::MatrixXd> raw;
    for (const auto& b : blocks) raw.push_back(b.mat);
    const Eigen::MatrixXd raw_all = hconcat(raw);
    const double s0 = svd(raw_all).S(0);

    const auto surrogate_blocks = denoise_lowrank(blocks, opts.lam_rel * s0, opts.denoise_iters);
    CandidateFit out;
    out.surrogate = hconcat(surrogate_blocks);
    const double sigma =
        (raw_all - out.surrogate).norm() / std::sqrt(static_cast<double>(raw_all.rows() * raw_all.cols()));
    const Eigen::VectorXd s = svd(out.surrogate).S;
    const int rank = estimate_rank(s, out.surrogate.rows(), out.surrogate.cols(), sigma);

    out.havok = havok_koopman(surrogate_blocks, rank);
    const auto held = heldout_blocks(d, order, q);
    out.summary = {order, rank, heldout_residual(out.havok, held)};
    return out;
}

int select_order(std::span<const OrderCandidate> candidates, double tol_improve) {
    if (candidates.empty()) throw ContractViolation("select_order: no candidates");
    // The r = 0 baseline predicts the held-out mean, i.e. a normalized residual of 1.
    double prev = 1.0;
    std::vector<double> gains;
    for (const auto& c : candidates) {
        gains.push_back(prev - c.residual);
        prev = c.residual;
    }
    std::size_t pick = gains.size();
    while (pick > 1 && gains[pick - 1] < tol_improve) --pick;
    return candidates[std::max<std::size_t>(pick, 1) - 1].order;
}

int estimate_order(const Dataset& data, const SpectralOptions& opts) {
    if (opts.r_max < 1) throw ConfigError("spectral: r_max must be >= 1");
    std::vector<OrderCandidate> cands;
    for (int r = 1; r <= opts.r_max; ++r) cands.push_back(fit_order_candidate(data, r, opts).summary);
    return select_order(cands, opts.tol_improve);
}

SpectralConfig extract_spectral(const Dataset& data, const SpectralOptions& opts) {
    const auto t0 = std::chrono::steady_clock::now();
    SpectralConfig cfg;
    cfg.dt = data.spec.dt;
    cfg.state_dim = data.spec.state_dim;

    std::optional<CandidateFit> chosen;
    if (opts.forced_order) {
        chosen = fit_order_candidate(data, *opts.forced_order, opts);
        cfg.candidates.push_back(chosen->summary);
    } else {
        if (opts.r_max < 1) throw ConfigError("spectral: r_max must be >= 1");
        std::vector<CandidateFit> fits;
        for (int r = 1; r <= opts.r_max; ++r) {
            fits.push_back(fit_order_candidate(data, r, opts));
            cfg.candidates.push_back(fits.back().summary);
        }
        const int order = select_order(cfg.candidates, opts.tol_improve);
        chosen = std::move(fits[static_cast<std::size_t>(order - 1)]);
    }

    cfg.order_r = chosen->summary.order;
    cfg.koopman_init = chosen->havok.koopman;
    cfg.singular_values = chosen->havok.singular_values;
    cfg.warnings = chosen->havok.warnings;
    cfg.observables = std::move(chosen->surrogate);
    const auto cls = classify_spectrum(chosen->havok.eigs, opts.tol_imag);
    cfg.m_r = cls.m_r;
    cfg.m_c = cls.m_c;
    cfg.target_eigs = cls.target_eigs;
    cfg.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return cfg;
}

std::string SpectralConfig::summary() const {
    std::ostringstream s;
    s << m_r << " real, " << m_c << " complex, order " << order_r;
    return s.str();
}

nlohmann::json SpectralConfig::to_json() const {
    nlohmann::json j;
    j["order"] = order_r;
    j["m_real"] = m_r;
    j["m_complex"] = m_c;
    j["latent_dim"] = latent_dim();
    j["state_dim"] = state_dim;
    j["dt"] = dt;
    auto& ev = j["eigenvalues"] = nlohmann::json::array();
    for (const auto& z : target_eigs) ev.push_back({z.real(), z.imag()});
    auto& k = j["koopman"] = nlohmann::json::array();
    for (Eigen::Index i = 0; i < koopman_init.rows(); ++i) {
        std::vector<double> row(static_cast<std::size_t>(koopman_init.cols()));
        for (Eigen::Index c = 0; c < koopman_init.cols(); ++c) row[static_cast<std::size_t>(c)] = koopman_init(i, c);
        k.push_back(row);
    }
    j["singular_values"] = std::vector<double>(singular_values.data(), singular_values.data() + singular_values.size());
    auto& cands = j["candidates"] = nlohmann::json::array();
    for (const auto& c : candidates) cands.push_back({{"order", c.order}, {"rank", c.rank}, {"residual", c.residual}});
    j["warnings"] = warnings;
    j["runtime_seconds"] = runtime_seconds;
    return j;
}

SpectralConfig SpectralConfig::from_json(const nlohmann::json& j) {
    SpectralConfig c;
    try {
        c.order_r = j.at("order").get<int>();
        c.m_r = j.at("m_real").get<int>();
        c.m_c = j.at("m_complex").get<int>();
        c.dt = j.value("dt", 0.0);
        c.state_dim = j.value("state_dim", 0);
        for (const auto& e : j.at("eigenvalues")) c.target_eigs.emplace_back(e.at(0).get<double>(), e.at(1).get<double>());
        const auto& k = j.at("koopman");
        const auto n = static_cast<Eigen::Index>(k.size());
        c.koopman_init.resize(n, n);
        for (Eigen::Index i = 0; i < n; ++i) {
            if (static_cast<Eigen::Index>(k[static_cast<std::size_t>(i)].size()) != n)
                throw ConfigError("spectral.json: koopman must be square");
            for (Eigen::Index col = 0; col < n; ++col)
                c.koopman_init(i, col) = k[static_cast<std::size_t>(i)][static_cast<std::size_t>(col)].get<double>();
        }
        const auto sv = j.value("singular_values", std::vector<double>{});
        c.singular_values = Eigen::Map<const Eigen::VectorXd>(sv.data(), static_cast<Eigen::Index>(sv.size()));
        if (j.contains("candidates"))
            for (const auto& e : j["candidates"])
                c.candidates.push_back({e.at("order").get<int>(), e.at("rank").get<int>(), e.at("residual").get<double>()});
        c.warnings = j.value("warnings", std::vector<std::string>{});
        c.runtime_seconds = j.value("runtime_seconds", 0.0);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("spectral.json: ") + e.what());
    }
    if (c.m_c % 2 != 0) throw ConfigError("spectral.json: m_complex must be even");
    if (static_cast<int>(c.target_eigs.size()) != c.latent_dim() || c.koopman_init.rows() != c.latent_dim())
        throw ConfigError("spectral.json: eigenvalue count or koopman size disagrees with m_real + m_complex");
    return c;
}

void save_spectral(const SpectralConfig& cfg, const std::filesystem::path& path) { write_json(path, cfg.to_json()); }

SpectralConfig load_spectral(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw ConfigError("spectral config not found: " + path.string());
    return SpectralConfig::from_json(read_json(path));
}

}  // namespace hkoop
