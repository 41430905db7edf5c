#include "hkoop/cli.hpp"

#include <chrono>
#include <cstdio>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "hkoop/dynamics.hpp"
#include "hkoop/errors.hpp"
#include "hkoop/io.hpp"
#include "hkoop/koopnet.hpp"
#include "hkoop/spectral.hpp"
#include "hkoop/trainer.hpp"

namespace hkoop {
namespace {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Run configuration: defaults < --config file < command-line flags.

struct GenerateOpts {
    std::string system;
    std::map<std::string, double> params;
    int n_train = 100;
    int n_test = 20;
    int traj_len = 250;
};

struct RunConfig {
    GenerateOpts generate;
    SpectralOptions spectral;
    TrainConfig train;
    double budget_scale = 1.0;
    int jobs = 1;
    int checkpoint_every = 50;
    std::optional<int> eval_trajectories;
};

const std::set<std::string>& top_level_keys() {
    static const std::set<std::string> keys{"generate", "spectral", "train", "budget_scale", "jobs", "checkpoint_every",
                                            "eval_trajectories"};
    return keys;
}

RunConfig load_run_config(const std::optional<std::string>& path) {
    RunConfig c;
    if (!path) return c;
    nlohmann::json j;
    try {
        j = read_json(*path);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config file " + *path + ": " + e.what());
    }
    if (!j.is_object()) throw ConfigError("config file must hold a JSON object");
    for (const auto& [key, _] : j.items())
        if (!top_level_keys().contains(key)) throw ConfigError("unknown config key '" + key + "'");
    try {
        if (j.contains("generate")) {
            for (const auto& [key, v] : j["generate"].items()) {
                if (key == "system") c.generate.system = v.get<std::string>();
                else if (key == "params") c.generate.params = v.get<std::map<std::string, double>>();
                else if (key == "n_train") c.generate.n_train = v.get<int>();
                else if (key == "n_test") c.generate.n_test = v.get<int>();
                else if (key == "traj_len") c.generate.traj_len = v.get<int>();
                else throw ConfigError("unknown config key 'generate." + key + "'");
            }
        }
        if (j.contains("spectral")) c.spectral = SpectralOptions::from_json(j["spectral"]);
        if (j.contains("train")) c.train = TrainConfig::from_json(j["train"], c.train);
        if (j.contains("budget_scale")) c.budget_scale = j["budget_scale"].get<double>();
        if (j.contains("jobs")) c.jobs = j["jobs"].get<int>();
        if (j.contains("checkpoint_every")) c.checkpoint_every = j["checkpoint_every"].get<int>();
        if (j.contains("eval_trajectories")) c.eval_trajectories = j["eval_trajectories"].get<int>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config file " + *path + ": " + e.what());
    }
    return c;
}

// Flags shared by the training-type commands.
struct TrainFlags {
    std::optional<std::string> mode;
    std::optional<int> order, m_real, m_complex;
    std::optional<int> epochs_recon, epochs_pretrain, epochs_finetune, epochs_joint;
    std::optional<int> batch_size;
    std::optional<double> lr;
    std::optional<double> budget_scale;
    bool smoke = false;
    std::optional<bool> frozen;

    void add(CLI::App* cmd, bool with_mode_and_dims) {
        if (with_mode_and_dims) {
            cmd->add_option("--mode", mode, "lusch | no-pretrain | with-pretrain");
            cmd->add_option("--order", order, "delay order (overrides)");
            cmd->add_option("--m-real", m_real, "number of real eigenvalues (overrides)");
            cmd->add_option("--m-complex", m_complex, "number of complex eigenvalues, even (overrides)");
        }
        cmd->add_option("--epochs-recon", epochs_recon);
        cmd->add_option("--epochs-pretrain", epochs_pretrain);
        cmd->add_option("--epochs-finetune", epochs_finetune);
        cmd->add_option("--epochs-joint", epochs_joint);
        cmd->add_option("--batch-size", batch_size);
        cmd->add_option("--lr", lr);
        cmd->add_option("--budget-scale", budget_scale, "multiply every phase length");
        cmd->add_flag("--smoke", smoke, "1/20 of the default budget");
        cmd->add_option("--koopman-frozen-per-window", frozen);
    }

    void apply(RunConfig& c, std::optional<std::uint64_t> seed) const {
        auto& t = c.train;
        if (mode) {
            auto m = parse_mode(*mode);
            if (!m) throw ConfigError("unknown mode '" + *mode + "' (valid: lusch, no-pretrain, with-pretrain)");
            t.mode = *m;
        }
        if (order) t.order = order;
        if (m_real) t.m_r = m_real;
        if (m_complex) t.m_c = m_complex;
        if (epochs_recon) t.epochs.recon = *epochs_recon;
        if (epochs_pretrain) t.epochs.pretrain = *epochs_pretrain;
        if (epochs_finetune) t.epochs.finetune = *epochs_finetune;
        if (epochs_joint) t.epochs.joint = *epochs_joint;
        if (batch_size) t.batch_size = *batch_size;
        if (lr) t.lr = *lr;
        if (frozen) t.koopman_frozen_per_window = *frozen;
        if (smoke) c.budget_scale = 0.05;
        if (budget_scale) c.budget_scale = *budget_scale;
        if (seed) t.seed = *seed;
        if (!(c.budget_scale > 0.0)) throw ConfigError("budget scale must be positive");
        if (c.budget_scale != 1.0) t = t.scaled(c.budget_scale);
        t.validate();
    }
};

nlohmann::json resolved_json(const RunConfig& c) {
    return {{"spectral", c.spectral.to_json()},
            {"train", c.train.to_json()},
            {"budget_scale", c.budget_scale},
            {"jobs", c.jobs}};
}

// ---------------------------------------------------------------------------
// Helpers

Dataset load_data(const std::string& dir) {
    if (!fs::exists(fs::path(dir) / "dataset.json")) throw ConfigError("no dataset found in '" + dir + "'");
    return load_dataset(dir);
}

std::string minutes(double seconds) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(1) << seconds / 60.0;
    return s.str();
}

void print_runtime(std::ostream& out, const std::string& label, std::optional<double> sdp, double training) {
    out << std::left << std::setw(16) << "Runtime (min)" << std::setw(8) << "SDP" << std::setw(10) << "Training"
        << "Total\n";
    out << std::left << std::setw(16) << label << std::setw(8) << (sdp ? minutes(*sdp) : "-") << std::setw(10)
        << minutes(training) << minutes(sdp.value_or(0.0) + training) << '\n';
}

nlohmann::json normalization_json(const Normalization& n) {
    return {{"scale", std::vector<double>(n.scale.data(), n.scale.data() + n.scale.size())},
            {"shift", std::vector<double>(n.shift.data(), n.shift.data() + n.shift.size())}};
}

SpectralConfig run_extraction(const Dataset& data, const SpectralOptions& opts, const fs::path& out_dir,
                              std::ostream& out) {
    SpectralConfig sc = extract_spectral(data, opts);
    save_spectral(sc, out_dir / "spectral.json");
    out << sc.summary() << '\n';
    for (const auto& w : sc.warnings) out << "warning: " << w << '\n';
    return sc;
}

// ---------------------------------------------------------------------------
// Commands

int cmd_generate(const RunConfig& c, std::uint64_t seed, const std::string& out_dir, std::ostream& out) {
    if (c.generate.system.empty()) throw ConfigError("--system is required");
    const auto kind = parse_system(c.generate.system);
    if (!kind) {
        std::string valid;
        for (const auto& n : system_names()) valid += (valid.empty() ? "" : ", ") + n;
        throw ConfigError("unknown system '" + c.generate.system + "' (valid: " + valid + ")");
    }
    SystemSpec spec = SystemSpec::defaults(*kind);
    for (const auto& [k, v] : c.generate.params) {
        if (!spec.params.contains(k)) throw ConfigError("system " + c.generate.system + " has no parameter '" + k + "'");
        spec.params[k] = v;
    }
    spec.validate();
    if (c.generate.n_train < 1 || c.generate.n_test < 0 || c.generate.traj_len < 2)
        throw ConfigError("need n_train >= 1, n_test >= 0 and traj_len >= 2");
    const Dataset data = generate_dataset(spec, c.generate.n_train, c.generate.n_test, c.generate.traj_len, seed);
    save_dataset(data, out_dir);
    out << "wrote " << data.train.size() << " train and " << data.test.size() << " test trajectories of "
        << c.generate.system << " to " << out_dir << '\n';
    return kExitOk;
}

int cmd_extract(const RunConfig& c, const std::string& data_dir, const std::string& out_dir, std::ostream& out) {
    const Dataset data = load_data(data_dir);
    run_extraction(data, c.spectral, out_dir, out);
    return kExitOk;
}

int cmd_train(const RunConfig& c, const std::string& data_dir, const std::optional<std::string>& spectral_path,
              const std::string& out_dir, std::ostream& out) {
    const Dataset data = load_data(data_dir);
    std::optional<SpectralConfig> sc;
    if (c.train.mode != TrainMode::Lusch) {
        if (spectral_path)
            sc = load_spectral(*spectral_path);
        else
            sc = run_extraction(data, c.spectral, out_dir, out);
    }
    const NetShape shape = resolve_shape(data, c.train, sc ? &*sc : nullptr);
    KoopmanNet net = KoopmanNet::create(shape, c.train.seed);

    const fs::path ckpt_path = fs::path(out_dir) / "model.ckpt";
    nlohmann::json extra{{"system", system_name(data.spec.kind)},
                         {"mode", mode_name(c.train.mode)},
                         {"normalization", normalization_json(data.normalization)}};
    auto save = [&](const KoopmanNet& n, const std::string& phase, int epoch) {
        Checkpoint ck{n, sc, c.train.seed, phase, extra};
        ck.extra["epoch"] = epoch;
        save_checkpoint(ckpt_path, ck);
    };
    TrainHooks hooks;
    hooks.checkpoint = save;
    hooks.checkpoint_every = c.checkpoint_every;
    const int total = c.train.mode == TrainMode::WithPretrain
                          ? c.train.epochs.total()
                          : c.train.epochs.recon + c.train.epochs.finetune + c.train.epochs.joint;
    const int every = std::max(1, total / 20);
    hooks.progress = [&](const EpochRow& r) {
        if (r.epoch % every == 0 || r.epoch == total)
            out << "epoch " << r.epoch << '/' << total << ' ' << r.phase << " test_mse " << format_double(r.test_mse)
                << std::endl;
    };

    out << "training " << mode_name(c.train.mode) << ": order " << shape.order << ", " << shape.m_r << " real, "
        << shape.m_c << " complex" << std::endl;
    const ExperimentRecord rec = train(net, data, c.train, sc ? &*sc : nullptr, hooks);
    save(net, "done", static_cast<int>(rec.rows.size()));
    atomic_write(fs::path(out_dir) / "metrics.csv", metrics_csv(rec));
    nlohmann::json summary = rec.summary_json();
    summary["resolved_config"] = resolved_json(c);
    summary["system"] = system_name(data.spec.kind);
    write_json(fs::path(out_dir) / "summary.json", summary);

    out << "final test MSE " << format_double(rec.final_mse) << " (normalized), " << format_double(rec.final_mse_raw)
        << " (raw)\n";
    print_runtime(out, mode_name(c.train.mode), sc ? std::optional<double>(rec.sdp_seconds) : std::nullopt,
                  rec.training_seconds());
    return kExitOk;
}

int cmd_eval(const RunConfig& c, const std::string& ckpt_path, const std::string& data_dir, const std::string& out_dir,
             std::ostream& out) {
    if (!fs::exists(ckpt_path)) throw ConfigError("checkpoint not found: " + ckpt_path);
    const Checkpoint ck = load_checkpoint(ckpt_path);
    const Dataset data = load_data(data_dir);
    const NetShape& s = ck.net.shape();
    if (s.state_dim != data.spec.state_dim)
        throw ConfigError("checkpoint state dimension " + std::to_string(s.state_dim) + " does not match dataset (" +
                          std::to_string(data.spec.state_dim) + ")");
    if (std::abs(s.dt - data.spec.dt) > 1e-12) throw ConfigError("checkpoint dt does not match the dataset");
    if (ck.extra.contains("system") && ck.extra["system"] != system_name(data.spec.kind))
        throw ConfigError("checkpoint was trained on " + ck.extra["system"].get<std::string>() + ", dataset is " +
                          system_name(data.spec.kind));
    const auto test = data.normalized_test();
    if (test.empty()) throw ConfigError("dataset has no test trajectories");
    for (const auto& t : test)
        if (t.length() <= s.order) throw ConfigError("test trajectories are not longer than the model order");

    const double mse = eval_one_step_mse(ck.net, test);
    const double mse_raw = eval_one_step_mse_raw(ck.net, test, data.normalization);
    const std::size_t n_out =
        std::min(test.size(), static_cast<std::size_t>(std::max(0, c.eval_trajectories.value_or(static_cast<int>(test.size())))));
    const int n = s.state_dim;
    for (std::size_t i = 0; i < n_out; ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "%03zu", i);
        atomic_write(fs::path(out_dir) / ("l2_traj_" + std::string(name) + ".csv"),
                     l2_csv(eval_trajectory_l2(ck.net, test[i])));

        // One-step predictions next to the truth, original units.
        const Eigen::MatrixXd d = delay_matrix(test[i], s.order);
        const Eigen::Index m = d.cols() - 1;
        const Eigen::MatrixXd pred = data.normalization.invert(ck.net.predict_next(d.leftCols(m)).bottomRows(n));
        const Eigen::MatrixXd truth = data.test[i].states.rightCols(m);
        std::ostringstream csv;
        csv << "step";
        for (int k = 1; k <= n; ++k) csv << ",true_x" << k;
        for (int k = 1; k <= n; ++k) csv << ",pred_x" << k;
        csv << '\n';
        for (Eigen::Index col = 0; col < m; ++col) {
            csv << col + s.order;
            for (int k = 0; k < n; ++k) csv << ',' << format_double(truth(k, col));
            for (int k = 0; k < n; ++k) csv << ',' << format_double(pred(k, col));
            csv << '\n';
        }
        atomic_write(fs::path(out_dir) / ("pred_traj_" + std::string(name) + ".csv"), csv.str());
    }
    write_json(fs::path(out_dir) / "eval.json", {{"one_step_mse", mse},
                                                 {"one_step_mse_raw", mse_raw},
                                                 {"test_trajectories", test.size()},
                                                 {"curves_written", n_out},
                                                 {"checkpoint", ckpt_path}});
    out << "one-step MSE " << format_double(mse) << " (normalized), " << format_double(mse_raw) << " (raw)\n";
    return kExitOk;
}

int cmd_sweep_eig(const RunConfig& c, const std::string& data_dir, const std::optional<std::string>& spectral_path,
                  const std::string& out_dir, std::ostream& out) {
    const Dataset data = load_data(data_dir);
    const SpectralConfig sc =
        spectral_path ? load_spectral(*spectral_path) : run_extraction(data, c.spectral, out_dir, out);
    const auto rows = sweep_eigs(data, c.train, &sc, c.jobs);
    atomic_write(fs::path(out_dir) / "eig_sweep.csv", eig_sweep_csv(rows));
    for (const auto& r : rows)
        out << r.m_r << " real, " << r.m_c << " complex: " << format_double(r.final_mse) << (r.sdp ? "  *" : "")
            << '\n';
    return kExitOk;
}

int cmd_sweep_order(const RunConfig& c, const std::string& data_dir, const std::vector<int>& orders,
                    const std::string& out_dir, std::ostream& out) {
    if (orders.empty()) throw ConfigError("--orders must list at least one order");
    const Dataset data = load_data(data_dir);
    const auto rows = sweep_order(data, c.train, c.spectral, orders, c.jobs);
    atomic_write(fs::path(out_dir) / "order_sweep.csv", order_sweep_csv(rows));
    std::ostringstream curves;
    curves << "order,epoch,test_mse\n";
    for (const auto& r : rows)
        for (std::size_t e = 0; e < r.mse_curve.size(); ++e)
            curves << r.order << ',' << e + 1 << ',' << format_double(r.mse_curve[e]) << '\n';
    atomic_write(fs::path(out_dir) / "order_sweep_curves.csv", curves.str());
    for (const auto& r : rows)
        out << "order " << r.order << " (" << r.m_r << " real, " << r.m_c << " complex): " << format_double(r.final_mse)
            << '\n';
    return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Hybrid spectral / autoencoder Koopman models", "hkoop"};
    app.require_subcommand(1);

    std::optional<std::uint64_t> seed;
    std::optional<std::string> config_path;
    std::string out_dir;
    auto shared = [&](CLI::App* cmd) {
        cmd->add_option("--seed", seed, "random seed");
        cmd->add_option("--out", out_dir, "output directory")->required();
        cmd->add_option("--config", config_path, "JSON config file")->check(CLI::ExistingFile);
    };

    // generate
    auto* gen = app.add_subcommand("generate", "simulate a train/test dataset");
    std::optional<std::string> system;
    std::vector<std::string> param_flags;
    std::optional<int> n_train, n_test, traj_len;
    gen->add_option("--system", system, "discrete-spectrum | fluid-flow | pendulum | lorenz");
    gen->add_option("--param", param_flags, "system parameter override, key=value")->take_all();
    gen->add_option("--n-train", n_train);
    gen->add_option("--n-test", n_test);
    gen->add_option("--traj-len", traj_len);
    shared(gen);

    // extract
    auto* ext = app.add_subcommand("extract", "spectral configuration from a dataset");
    std::string data_dir;
    std::optional<int> forced_order, r_max;
    ext->add_option("--data", data_dir, "dataset directory")->required();
    ext->add_option("--order", forced_order, "skip order selection and use this order");
    ext->add_option("--r-max", r_max, "largest order considered");
    shared(ext);

    // train
    auto* trn = app.add_subcommand("train", "train a Koopman autoencoder");
    std::optional<std::string> spectral_path;
    std::optional<int> checkpoint_every;
    TrainFlags train_flags;
    trn->add_option("--data", data_dir, "dataset directory")->required();
    trn->add_option("--spectral", spectral_path, "spectral.json (extracted on the fly when omitted)");
    trn->add_option("--checkpoint-every", checkpoint_every, "epochs between checkpoints");
    train_flags.add(trn, true);
    shared(trn);

    // eval
    auto* evl = app.add_subcommand("eval", "one-step MSE and L2 curves on the test set");
    std::string ckpt;
    std::optional<int> eval_traj;
    evl->add_option("--checkpoint", ckpt, "model checkpoint")->required();
    evl->add_option("--data", data_dir, "dataset directory")->required();
    evl->add_option("--trajectories", eval_traj, "number of test trajectories to write curves for");
    shared(evl);

    // sweeps
    std::optional<int> jobs;
    auto* swe = app.add_subcommand("sweep-eig", "train every eigenvalue configuration up to 6 in total");
    TrainFlags sweep_flags;
    swe->add_option("--data", data_dir, "dataset directory")->required();
    swe->add_option("--spectral", spectral_path, "spectral.json marking the derived configuration");
    swe->add_option("--jobs", jobs, "parallel experiments");
    sweep_flags.add(swe, false);
    shared(swe);

    auto* swo = app.add_subcommand("sweep-order", "train the pretrained pipeline at several orders");
    std::vector<int> orders;
    swo->add_option("--data", data_dir, "dataset directory")->required();
    swo->add_option("--orders", orders, "orders to train, e.g. 1,2,3")->delimiter(',')->required();
    swo->add_option("--jobs", jobs, "parallel experiments");
    TrainFlags order_flags;
    order_flags.add(swo, false);
    shared(swo);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        RunConfig c = load_run_config(config_path);
        if (jobs) c.jobs = *jobs;
        if (c.jobs < 1) throw ConfigError("--jobs must be >= 1");
        if (checkpoint_every) c.checkpoint_every = *checkpoint_every;
        if (eval_traj) c.eval_trajectories = *eval_traj;
        fs::create_directories(out_dir);

        if (gen->parsed()) {
            if (system) c.generate.system = *system;
            for (const auto& p : param_flags) {
                const auto eq = p.find('=');
                if (eq == std::string::npos) throw ConfigError("--param expects key=value, got '" + p + "'");
                try {
                    c.generate.params[p.substr(0, eq)] = std::stod(p.substr(eq + 1));
                } catch (const std::exception&) {
                    throw ConfigError("--param value is not a number: '" + p + "'");
                }
            }
            if (n_train) c.generate.n_train = *n_train;
            if (n_test) c.generate.n_test = *n_test;
            if (traj_len) c.generate.traj_len = *traj_len;
            return cmd_generate(c, seed.value_or(0), out_dir, out);
        }
        if (ext->parsed()) {
            if (forced_order) c.spectral.forced_order = forced_order;
            if (r_max) c.spectral.r_max = *r_max;
            return cmd_extract(c, data_dir, out_dir, out);
        }
        if (trn->parsed()) {
            train_flags.apply(c, seed);
            return cmd_train(c, data_dir, spectral_path, out_dir, out);
        }
        if (evl->parsed()) return cmd_eval(c, ckpt, data_dir, out_dir, out);
        if (swe->parsed()) {
            sweep_flags.apply(c, seed);
            return cmd_sweep_eig(c, data_dir, spectral_path, out_dir, out);
        }
        if (swo->parsed()) {
            order_flags.apply(c, seed);
            return cmd_sweep_order(c, data_dir, orders, out_dir, out);
        }
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const ContractViolation& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const fs::filesystem_error& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const NumericalFailure& e) {
        err << "numerical failure: " << e.what() << '\n';
        return kExitNumerical;
    }
    return kExitUsage;
}

}  // namespace hkoop
