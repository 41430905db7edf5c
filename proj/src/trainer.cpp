#include "hkoop/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <mutex>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include "hkoop/io.hpp"

namespace hkoop {

std::string mode_name(TrainMode mode) {
    switch (mode) {
        case TrainMode::Lusch: return "lusch";
        case TrainMode::NoPretrain: return "no-pretrain";
        case TrainMode::WithPretrain: return "with-pretrain";
    }
    return "unknown";
}

std::optional<TrainMode> parse_mode(std::string_view name) {
    for (auto m : {TrainMode::Lusch, TrainMode::NoPretrain, TrainMode::WithPretrain})
        if (name == mode_name(m)) return m;
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// Configuration

void TrainConfig::validate() const {
    if (epochs.recon < 0 || epochs.pretrain < 0 || epochs.finetune < 0 || epochs.joint < 0)
        throw ConfigError("epoch counts must be nonnegative");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be positive");
    if (objective.w_recon < 0 || objective.w_lin < 0 || objective.w_fwd < 0)
        throw ConfigError("loss weights must be nonnegative");
    if (objective.t_lin < 1 || objective.t_fwd < 1) throw ConfigError("horizons t_lin and t_fwd must be >= 1");
    if (order && *order < 1) throw ConfigError("order must be >= 1");
    if (m_r && *m_r < 0) throw ConfigError("m_real must be >= 0");
    if (m_c && (*m_c < 0 || *m_c % 2 != 0)) throw ConfigError("m_complex must be a nonnegative even number");
    for (int w : net.enc_hidden)
        if (w < 1) throw ConfigError("enc_hidden widths must be positive");
    for (int w : net.aux_hidden)
        if (w < 1) throw ConfigError("aux_hidden widths must be positive");
}

TrainConfig TrainConfig::scaled(double factor) const {
    auto scale = [factor](int e) { return e > 0 ? std::max(1, static_cast<int>(std::lround(e * factor))) : 0; };
    TrainConfig out = *this;
    out.epochs = {scale(epochs.recon), scale(epochs.pretrain), scale(epochs.finetune), scale(epochs.joint)};
    return out;
}

nlohmann::json TrainConfig::to_json() const {
    nlohmann::json j{{"mode", mode_name(mode)},
                     {"epochs",
                      {{"recon", epochs.recon},
                       {"pretrain", epochs.pretrain},
                       {"finetune", epochs.finetune},
                       {"joint", epochs.joint}}},
                     {"batch_size", batch_size},
                     {"lr", lr},
                     {"w_recon", objective.w_recon},
                     {"w_lin", objective.w_lin},
                     {"w_fwd", objective.w_fwd},
                     {"t_lin", objective.t_lin},
                     {"t_fwd", objective.t_fwd},
                     {"average_horizons", objective.average_horizons},
                     {"seed", seed},
                     {"enc_hidden", net.enc_hidden},
                     {"aux_hidden", net.aux_hidden},
                     {"koopman_frozen_per_window", koopman_frozen_per_window}};
    j["order"] = order ? nlohmann::json(*order) : nlohmann::json(nullptr);
    j["m_real"] = m_r ? nlohmann::json(*m_r) : nlohmann::json(nullptr);
    j["m_complex"] = m_c ? nlohmann::json(*m_c) : nlohmann::json(nullptr);
    return j;
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j, TrainConfig c) {
    if (!j.is_object()) throw ConfigError("training config must be a JSON object");
    auto opt_int = [](const nlohmann::json& v) -> std::optional<int> {
        if (v.is_null()) return std::nullopt;
        return v.get<int>();
    };
    try {
        for (const auto& [key, v] : j.items()) {
            if (key == "mode") {
                auto m = parse_mode(v.get<std::string>());
                if (!m) throw ConfigError("unknown mode '" + v.get<std::string>() + "' (lusch, no-pretrain, with-pretrain)");
                c.mode = *m;
            } else if (key == "epochs") {
                for (const auto& [ek, ev] : v.items()) {
                    if (ek == "recon") c.epochs.recon = ev.get<int>();
                    else if (ek == "pretrain") c.epochs.pretrain = ev.get<int>();
                    else if (ek == "finetune") c.epochs.finetune = ev.get<int>();
                    else if (ek == "joint") c.epochs.joint = ev.get<int>();
                    else throw ConfigError("unknown key 'epochs." + ek + "'");
                }
            } else if (key == "batch_size") c.batch_size = v.get<int>();
            else if (key == "lr") c.lr = v.get<double>();
            else if (key == "w_recon") c.objective.w_recon = v.get<double>();
            else if (key == "w_lin") c.objective.w_lin = v.get<double>();
            else if (key == "w_fwd") c.objective.w_fwd = v.get<double>();
            else if (key == "t_lin") c.objective.t_lin = v.get<int>();
            else if (key == "t_fwd") c.objective.t_fwd = v.get<int>();
            else if (key == "average_horizons") c.objective.average_horizons = v.get<bool>();
            else if (key == "seed") c.seed = v.get<std::uint64_t>();
            else if (key == "order") c.order = opt_int(v);
            else if (key == "m_real") c.m_r = opt_int(v);
            else if (key == "m_complex") c.m_c = opt_int(v);
            else if (key == "enc_hidden") c.net.enc_hidden = v.get<std::vector<int>>();
            else if (key == "aux_hidden") c.net.aux_hidden = v.get<std::vector<int>>();
            else if (key == "koopman_frozen_per_window") c.koopman_frozen_per_window = v.get<bool>();
            else throw ConfigError("unknown training config key '" + key + "'");
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("training config: ") + e.what());
    }
    c.validate();
    return c;
}

ManualConfig lusch_default(SystemKind kind) {
    switch (kind) {
        case SystemKind::DiscreteSpectrum: return {1, 2, 0};
        case SystemKind::FluidFlowOnAttractor: return {1, 0, 2};
        case SystemKind::Pendulum: return {1, 0, 2};
        case SystemKind::Lorenz: return {1, 2, 4};
    }
    return {};
}

NetShape resolve_shape(const Dataset& data, const TrainConfig& cfg, const SpectralConfig* spectral) {
    NetShape s;
    s.state_dim = data.spec.state_dim;
    s.dt = data.spec.dt;
    s.config = cfg.net;
    if (cfg.mode == TrainMode::Lusch) {
        const ManualConfig d = lusch_default(data.spec.kind);
        s.order = cfg.order.value_or(d.order);
        s.m_r = cfg.m_r.value_or(d.m_r);
        s.m_c = cfg.m_c.value_or(d.m_c);
    } else {
        if (!spectral) throw ConfigError("mode " + mode_name(cfg.mode) + " needs a spectral configuration");
        if (spectral->state_dim != 0 && spectral->state_dim != data.spec.state_dim)
            throw ConfigError("spectral configuration was extracted from " + std::to_string(spectral->state_dim) +
                              "-dimensional data, dataset is " + std::to_string(data.spec.state_dim) + "-dimensional");
        if (spectral->dt > 0.0 && std::abs(spectral->dt - data.spec.dt) > 1e-12)
            throw ConfigError("spectral configuration dt does not match the dataset");
        auto check = [](const std::optional<int>& given, int derived, const char* what) {
            if (given && *given != derived)
                throw ConfigError(std::string(what) + " override " + std::to_string(*given) +
                                  " conflicts with the spectral configuration (" + std::to_string(derived) + ")");
        };
        check(cfg.order, spectral->order_r, "order");
        check(cfg.m_r, spectral->m_r, "m_real");
        check(cfg.m_c, spectral->m_c, "m_complex");
        s.order = spectral->order_r;
        s.m_r = spectral->m_r;
        s.m_c = spectral->m_c;
    }
    s.validate();
    return s;
}

// ---------------------------------------------------------------------------
// Records

double ExperimentRecord::training_seconds() const {
    double t = 0.0;
    for (const auto& [_, s] : phase_seconds) t += s;
    return t;
}

nlohmann::json ExperimentRecord::summary_json() const {
    nlohmann::json phases = nlohmann::json::object();
    for (const auto& [name, s] : phase_seconds) phases[name] = s;
    nlohmann::json j{{"final_test_mse", final_mse},
                     {"final_test_mse_raw", final_mse_raw},
                     {"epochs_run", rows.size()},
                     {"runtime",
                      {{"sdp_seconds", sdp_seconds},
                       {"training_seconds", training_seconds()},
                       {"total_seconds", sdp_seconds + training_seconds()},
                       {"phases", phases}}},
                     {"config", config.to_json()},
                     {"architecture", shape_to_json(shape)}};
    j["spectral"] = spectral ? spectral->to_json() : nlohmann::json(nullptr);
    return j;
}

namespace {

std::string opt_cell(const std::optional<double>& v) { return v ? format_double(*v) : std::string{}; }

}  // namespace

std::string metrics_csv(const ExperimentRecord& rec) {
    std::ostringstream out;
    out << "epoch,phase,loss_recon,loss_lin,loss_fwd,test_mse\n";
    for (const auto& r : rec.rows)
        out << r.epoch << ',' << r.phase << ',' << opt_cell(r.loss_recon) << ',' << opt_cell(r.loss_lin) << ','
            << opt_cell(r.loss_fwd) << ',' << format_double(r.test_mse) << '\n';
    return out.str();
}

std::string l2_csv(const Eigen::VectorXd& curve) {
    std::ostringstream out;
    out << "step,l2_error\n";
    for (Eigen::Index i = 0; i < curve.size(); ++i) out << i << ',' << format_double(curve(i)) << '\n';
    return out.str();
}

std::string eig_sweep_csv(std::span<const EigSweepRow> rows) {
    std::ostringstream out;
    out << "m_real,m_complex,latent_dim,final_mse,sdp\n";
    for (const auto& r : rows)
        out << r.m_r << ',' << r.m_c << ',' << r.m_r + r.m_c << ',' << format_double(r.final_mse) << ','
            << (r.sdp ? 1 : 0) << '\n';
    return out.str();
}

std::string order_sweep_csv(std::span<const OrderSweepRow> rows) {
    std::ostringstream out;
    out << "order,m_real,m_complex,final_mse\n";
    for (const auto& r : rows)
        out << r.order << ',' << r.m_r << ',' << r.m_c << ',' << format_double(r.final_mse) << '\n';
    return out.str();
}

// ---------------------------------------------------------------------------
// Evaluation

namespace {

struct OneStep {
    Eigen::MatrixXd truth;  // next states, n x samples
    Eigen::MatrixXd pred;
};

OneStep one_step(const KoopmanNet& net, const Trajectory& traj) {
    const int r = net.shape().order;
    const Eigen::Index n = traj.dim();
    if (n != net.shape().state_dim) throw ConfigError("trajectory dimension does not match the network");
    if (traj.length() <= r) throw ContractViolation("trajectory must be longer than the order");
    const Eigen::MatrixXd d = delay_matrix(traj, r);
    const Eigen::Index m = d.cols() - 1;
    const Eigen::MatrixXd p = net.predict_next(d.leftCols(m));
    return {d.rightCols(m).bottomRows(n), p.bottomRows(n)};
}

}  // namespace

double eval_one_step_mse(const KoopmanNet& net, std::span<const Trajectory> test) {
    double sum = 0.0;
    Eigen::Index count = 0;
    for (const auto& t : test) {
        const auto s = one_step(net, t);
        sum += (s.truth - s.pred).colwise().squaredNorm().sum();
        count += s.truth.cols();
    }
    return count ? sum / static_cast<double>(count) : 0.0;
}

double eval_one_step_mse_raw(const KoopmanNet& net, std::span<const Trajectory> test, const Normalization& norm) {
    double sum = 0.0;
    Eigen::Index count = 0;
    for (const auto& t : test) {
        const auto s = one_step(net, t);
        sum += (norm.invert(s.truth) - norm.invert(s.pred)).colwise().squaredNorm().sum();
        count += s.truth.cols();
    }
    return count ? sum / static_cast<double>(count) : 0.0;
}

Eigen::VectorXd eval_trajectory_l2(const KoopmanNet& net, const Trajectory& traj) {
    const auto s = one_step(net, traj);
    return (s.truth - s.pred).colwise().norm().transpose();
}

// ---------------------------------------------------------------------------
// Training

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

// Every training window: xi_k .. xi_{k+span} inside one trajectory.
struct WindowSet {
    std::vector<Eigen::MatrixXd> delay;
    std::vector<std::pair<int, Eigen::Index>> index;  // (trajectory, first delay column)
    int span = 0;

    WindowSet(const std::vector<Trajectory>& trajs, int order, int span_) : span(span_) {
        for (std::size_t t = 0; t < trajs.size(); ++t) {
            if (trajs[t].length() < order + span) continue;
            delay.push_back(delay_matrix(trajs[t], order));
            const auto ti = static_cast<int>(delay.size() - 1);
            for (Eigen::Index c = 0; c + span < delay.back().cols(); ++c) index.emplace_back(ti, c);
        }
        if (index.empty()) throw ConfigError("training trajectories are too short for the requested order and horizons");
    }

    std::vector<Eigen::MatrixXd> gather(std::span<const std::size_t> ids) const {
        const Eigen::Index rows = delay.front().rows();
        std::vector<Eigen::MatrixXd> xs(static_cast<std::size_t>(span) + 1,
                                        Eigen::MatrixXd(rows, static_cast<Eigen::Index>(ids.size())));
        for (std::size_t j = 0; j < ids.size(); ++j) {
            const auto& [t, c] = index[ids[j]];
            for (int tau = 0; tau <= span; ++tau)
                xs[static_cast<std::size_t>(tau)].col(static_cast<Eigen::Index>(j)) =
                    delay[static_cast<std::size_t>(t)].col(c + tau);
        }
        return xs;
    }
};

struct Runner {
    KoopmanNet& net;
    const TrainConfig& cfg;
    const TrainHooks& hooks;
    const WindowSet& windows;
    const std::vector<Trajectory>& test;
    ExperimentRecord& rec;
    std::mt19937_64 rng;
    int epoch = 0;

    std::vector<std::vector<std::size_t>> batches() {
        std::vector<std::size_t> order(windows.index.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::shuffle(order.begin(), order.end(), rng);
        std::vector<std::vector<std::size_t>> out;
        const auto b = static_cast<std::size_t>(cfg.batch_size);
        for (std::size_t at = 0; at < order.size(); at += b)
            out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(at),
                             order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), at + b)));
        return out;
    }

    void finish_epoch(EpochRow row, const std::string& phase, const Eigen::VectorXd& last_good) {
        row.epoch = epoch;
        row.phase = phase;
        row.test_mse = NAN;
        try {
            if (net.params().allFinite()) row.test_mse = eval_one_step_mse(net, test);
        } catch (const NumericalFailure&) {
        }
        if (!std::isfinite(row.test_mse)) diverge(phase, last_good);
        rec.rows.push_back(row);
        if (hooks.progress) hooks.progress(row);
        if (hooks.checkpoint && hooks.checkpoint_every > 0 && epoch % hooks.checkpoint_every == 0)
            hooks.checkpoint(net, phase, epoch);
    }

    [[noreturn]] void diverge(const std::string& phase, const Eigen::VectorXd& last_good) {
        net.params() = last_good;
        if (hooks.checkpoint) hooks.checkpoint(net, phase, epoch);
        throw TrainingDiverged(phase, epoch);
    }

    void objective_phase(const std::string& phase, int epochs, const Objective& obj,
                         std::vector<ParamRange> active) {
        const auto t0 = Clock::now();
        AdamState adam = AdamState::zeros(net.params().size());
        Eigen::VectorXd grad(net.params().size());
        for (int e = 0; e < epochs; ++e) {
            ++epoch;
            const Eigen::VectorXd last_good = net.params();
            LossTerms sum;
            double weight = 0.0;
            for (const auto& ids : batches()) {
                const auto xs = windows.gather(ids);
                grad.setZero();
                LossTerms l;
                try {
                    l = evaluate_objective(net, xs, obj, &grad);
                } catch (const NumericalFailure&) {
                    diverge(phase, last_good);
                }
                if (!std::isfinite(l.total) || !grad.allFinite()) diverge(phase, last_good);
                adam_step(net.params(), grad, adam, cfg.lr, active);
                const auto w = static_cast<double>(ids.size());
                sum.recon += w * l.recon;
                sum.lin += w * l.lin;
                sum.fwd += w * l.fwd;
                weight += w;
            }
            EpochRow row;
            if (obj.w_recon != 0.0) row.loss_recon = sum.recon / weight;
            if (obj.w_lin != 0.0) row.loss_lin = sum.lin / weight;
            if (obj.w_fwd != 0.0) row.loss_fwd = sum.fwd / weight;
            finish_epoch(row, phase, last_good);
        }
        rec.phase_seconds.emplace_back(phase, seconds_since(t0));
        if (hooks.checkpoint && epochs > 0) hooks.checkpoint(net, phase, epoch);
    }

    void pretrain_phase(int epochs, const Eigen::VectorXd& targets) {
        const auto t0 = Clock::now();
        // The autoencoder is frozen, so the latents of every window start are fixed.
        Eigen::MatrixXd latents(net.shape().latent_dim(), static_cast<Eigen::Index>(windows.index.size()));
        {
            Eigen::MatrixXd x0(windows.delay.front().rows(), latents.cols());
            for (std::size_t i = 0; i < windows.index.size(); ++i) {
                const auto& [t, c] = windows.index[i];
                x0.col(static_cast<Eigen::Index>(i)) = windows.delay[static_cast<std::size_t>(t)].col(c);
            }
            latents = net.encode(x0);
        }
        AdamState adam = AdamState::zeros(net.params().size());
        Eigen::VectorXd grad(net.params().size());
        const ParamRange aux[] = {net.aux_range()};
        for (int e = 0; e < epochs; ++e) {
            ++epoch;
            const Eigen::VectorXd last_good = net.params();
            double sum = 0.0, weight = 0.0;
            for (const auto& ids : batches()) {
                Eigen::MatrixXd y(latents.rows(), static_cast<Eigen::Index>(ids.size()));
                for (std::size_t j = 0; j < ids.size(); ++j)
                    y.col(static_cast<Eigen::Index>(j)) = latents.col(static_cast<Eigen::Index>(ids[j]));
                grad.setZero();
                double l = NAN;
                try {
                    l = evaluate_pretrain(net, y, targets, &grad);
                } catch (const NumericalFailure&) {
                    diverge("pretrain", last_good);
                }
                if (!std::isfinite(l) || !grad.allFinite()) diverge("pretrain", last_good);
                adam_step(net.params(), grad, adam, cfg.lr, aux);
                sum += static_cast<double>(ids.size()) * l;
                weight += static_cast<double>(ids.size());
            }
            EpochRow row;
            row.loss_aux = sum / weight;
            finish_epoch(row, "pretrain", last_good);
        }
        rec.phase_seconds.emplace_back("pretrain", seconds_since(t0));
        if (hooks.checkpoint && epochs > 0) hooks.checkpoint(net, "pretrain", epoch);
    }
};

}  // namespace

ExperimentRecord train(KoopmanNet& net, const Dataset& data, const TrainConfig& cfg,
                       const SpectralConfig* spectral, const TrainHooks& hooks) {
    cfg.validate();
    const NetShape& shape = net.shape();
    if (shape.state_dim != data.spec.state_dim) throw ConfigError("network state dimension does not match the dataset");
    if (std::abs(shape.dt - data.spec.dt) > 1e-12 * std::max(1.0, data.spec.dt))
        throw ConfigError("network dt does not match the dataset");
    Eigen::VectorXd targets;
    if (cfg.mode == TrainMode::WithPretrain) {
        if (!spectral) throw ConfigError("with-pretrain mode needs a spectral configuration");
        if (spectral->order_r != shape.order || spectral->m_r != shape.m_r || spectral->m_c != shape.m_c)
            throw ConfigError("spectral configuration (" + spectral->summary() + ") does not match the network");
        targets = eigen_targets(shape, spectral->target_eigs);
    }
    net.koopman_frozen_per_window = cfg.koopman_frozen_per_window;

    ExperimentRecord rec;
    rec.config = cfg;
    rec.shape = shape;
    if (cfg.mode != TrainMode::Lusch && spectral) {
        rec.spectral = *spectral;
        rec.sdp_seconds = spectral->runtime_seconds;
    }

    const auto train_trajs = data.normalized_train();
    const auto test_trajs = data.normalized_test();
    const WindowSet windows(train_trajs, shape.order, cfg.objective.span());

    std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32), 0x74726e00u};
    Runner run{net, cfg, hooks, windows, test_trajs, rec, std::mt19937_64(seq)};

    Objective recon_only = cfg.objective;
    recon_only.w_lin = recon_only.w_fwd = 0.0;
    const ParamRange enc = net.encoder_range(), dec = net.decoder_range(), aux = net.aux_range();

    run.objective_phase("recon", cfg.epochs.recon, recon_only, {enc, dec});
    if (cfg.mode == TrainMode::WithPretrain) {
        run.pretrain_phase(cfg.epochs.pretrain, targets);
        run.objective_phase("finetune", cfg.epochs.finetune, cfg.objective, {enc, dec});
        run.objective_phase("joint", cfg.epochs.joint, cfg.objective, {enc, dec, aux});
    } else {
        run.objective_phase("joint", cfg.epochs.finetune + cfg.epochs.joint, cfg.objective, {enc, dec, aux});
    }

    rec.final_mse = eval_one_step_mse(net, test_trajs);
    rec.final_mse_raw = eval_one_step_mse_raw(net, test_trajs, data.normalization);
    if (!test_trajs.empty()) rec.l2_curve = eval_trajectory_l2(net, test_trajs.front());
    return rec;
}

TrainResult train_new(const Dataset& data, const TrainConfig& cfg, const SpectralConfig* spectral,
                      const TrainHooks& hooks) {
    cfg.validate();
    TrainResult out{KoopmanNet::create(resolve_shape(data, cfg, spectral), cfg.seed), {}};
    out.record = train(out.net, data, cfg, spectral, hooks);
    return out;
}

// ---------------------------------------------------------------------------
// Sweeps

void parallel_for(int n, int jobs, const std::function<void(int)>& fn) {
    jobs = std::max(1, std::min(jobs, n));
    if (jobs == 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::mutex mu;
    int next = 0;
    std::exception_ptr error;
    auto worker = [&] {
        for (;;) {
            int i;
            {
                std::lock_guard lock(mu);
                if (next >= n || error) return;
                i = next++;
            }
            try {
                fn(i);
            } catch (...) {
                std::lock_guard lock(mu);
                if (!error) error = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

std::vector<std::pair<int, int>> eig_sweep_configs(int max_total) {
    std::vector<std::pair<int, int>> out;
    for (int total = 1; total <= max_total; ++total)
        for (int mc = 0; mc <= total; mc += 2) out.emplace_back(total - mc, mc);
    return out;
}

std::vector<EigSweepRow> sweep_eigs(const Dataset& data, const TrainConfig& cfg, const SpectralConfig* sdp,
                                    int jobs, int max_total) {
    const auto configs = eig_sweep_configs(max_total);
    std::vector<EigSweepRow> rows(configs.size());
    parallel_for(static_cast<int>(configs.size()), jobs, [&](int i) {
        const auto [mr, mc] = configs[static_cast<std::size_t>(i)];
        TrainConfig c = cfg;
        c.mode = TrainMode::Lusch;
        c.order = 1;
        c.m_r = mr;
        c.m_c = mc;
        const auto result = train_new(data, c, nullptr);
        rows[static_cast<std::size_t>(i)] = {mr, mc, result.record.final_mse, sdp && sdp->m_r == mr && sdp->m_c == mc};
    });
    return rows;
}

std::vector<OrderSweepRow> sweep_order(const Dataset& data, const TrainConfig& cfg,
                                       const SpectralOptions& spectral_opts, std::span<const int> orders, int jobs) {
    for (int r : orders)
        if (r < 1 || r > spectral_opts.r_max)
            throw ConfigError("sweep order " + std::to_string(r) + " outside 1.." + std::to_string(spectral_opts.r_max));
    std::vector<OrderSweepRow> rows(orders.size());
    parallel_for(static_cast<int>(orders.size()), jobs, [&](int i) {
        SpectralOptions so = spectral_opts;
        so.forced_order = orders[static_cast<std::size_t>(i)];
        const SpectralConfig sc = extract_spectral(data, so);
        TrainConfig c = cfg;
        c.mode = TrainMode::WithPretrain;
        c.order.reset();
        c.m_r.reset();
        c.m_c.reset();
        const auto result = train_new(data, c, &sc);
        OrderSweepRow row{sc.order_r, sc.m_r, sc.m_c, {}, result.record.final_mse};
        for (const auto& e : result.record.rows) row.mse_curve.push_back(e.test_mse);
        rows[static_cast<std::size_t>(i)] = std::move(row);
    });
    return rows;
}

}  // namespace hkoop
