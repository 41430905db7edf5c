#pragma once

// Staged training, evaluation metrics and the two sweep drivers.

#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "hkoop/dynamics.hpp"
#include "hkoop/errors.hpp"
#include "hkoop/koopnet.hpp"
#include "hkoop/spectral.hpp"

namespace hkoop {

enum class TrainMode { Lusch, NoPretrain, WithPretrain };

std::string mode_name(TrainMode mode);  // "lusch", "no-pretrain", "with-pretrain"
std::optional<TrainMode> parse_mode(std::string_view name);

struct PhaseEpochs {
    int recon = 100;
    int pretrain = 100;
    int finetune = 200;
    int joint = 600;

    int total() const { return recon + pretrain + finetune + joint; }
};

struct TrainConfig {
    TrainMode mode = TrainMode::WithPretrain;
    PhaseEpochs epochs;
    int batch_size = 128;
    double lr = 1e-3;
    Objective objective;
    std::uint64_t seed = 0;
    std::optional<int> order;
    std::optional<int> m_r;
    std::optional<int> m_c;
    NetConfig net;
    bool koopman_frozen_per_window = false;

    void validate() const;
    /// Every phase length multiplied by `factor`, rounded, at least 1 if it was positive.
    TrainConfig scaled(double factor) const;

    nlohmann::json to_json() const;
    /// Applies the keys present in `j` on top of `base`; unknown keys throw ConfigError.
    static TrainConfig from_json(const nlohmann::json& j, TrainConfig base);
    static TrainConfig from_json(const nlohmann::json& j) { return from_json(j, TrainConfig{}); }
};

/// Real/complex/order configuration of the reference autoencoder for each system.
struct ManualConfig {
    int order = 1;
    int m_r = 0;
    int m_c = 2;
};
ManualConfig lusch_default(SystemKind kind);

/// Network dimensions implied by mode, manual overrides and (when used) the spectral stage.
NetShape resolve_shape(const Dataset& data, const TrainConfig& cfg, const SpectralConfig* spectral);

struct EpochRow {
    int epoch = 0;
    std::string phase;
    std::optional<double> loss_recon;
    std::optional<double> loss_lin;
    std::optional<double> loss_fwd;
    std::optional<double> loss_aux;  // pretrain phase only; not part of metrics.csv
    double test_mse = 0.0;
};

struct ExperimentRecord {
    std::vector<EpochRow> rows;
    double final_mse = 0.0;      // normalized units
    double final_mse_raw = 0.0;  // original state units
    Eigen::VectorXd l2_curve;    // first test trajectory, normalized units
    std::vector<std::pair<std::string, double>> phase_seconds;
    double sdp_seconds = 0.0;
    std::optional<SpectralConfig> spectral;
    TrainConfig config;
    NetShape shape;

    double training_seconds() const;
    nlohmann::json summary_json() const;
};

/// Training stopped on a non-finite loss or parameter. The network passed to
/// train() is rolled back to the parameters at the start of the failing epoch.
class TrainingDiverged : public NumericalFailure {
public:
    TrainingDiverged(std::string phase, int epoch)
        : NumericalFailure("non-finite loss in phase '" + phase + "' at epoch " + std::to_string(epoch)),
          phase_(std::move(phase)), epoch_(epoch) {}

    const std::string& phase() const noexcept { return phase_; }
    int epoch() const noexcept { return epoch_; }

private:
    std::string phase_;
    int epoch_;
};

struct TrainHooks {
    /// Called after every phase and every `checkpoint_every` epochs with the current network.
    std::function<void(const KoopmanNet&, const std::string& phase, int epoch)> checkpoint;
    int checkpoint_every = 50;
    /// Called after every logged epoch.
    std::function<void(const EpochRow&)> progress;
};

/// Runs the phase schedule of cfg.mode on `net` in place.
ExperimentRecord train(KoopmanNet& net, const Dataset& data, const TrainConfig& cfg,
                       const SpectralConfig* spectral, const TrainHooks& hooks = {});

struct TrainResult {
    KoopmanNet net;
    ExperimentRecord record;
};

/// Resolves the shape, initialises a network from cfg.seed and trains it.
TrainResult train_new(const Dataset& data, const TrainConfig& cfg, const SpectralConfig* spectral,
                      const TrainHooks& hooks = {});

/// Mean over every valid k of |x_{k+1} - last block of predict_next(xi_k)|^2.
double eval_one_step_mse(const KoopmanNet& net, std::span<const Trajectory> test);
/// Same metric in the units of `norm.invert`.
double eval_one_step_mse_raw(const KoopmanNet& net, std::span<const Trajectory> test, const Normalization& norm);
/// L2 error of each one-step prediction along the trajectory; length = length - order.
Eigen::VectorXd eval_trajectory_l2(const KoopmanNet& net, const Trajectory& traj);

struct EigSweepRow {
    int m_r = 0;
    int m_c = 0;
    double final_mse = 0.0;
    bool sdp = false;
};

/// All (m_r, m_c) with 1 <= m_r + m_c <= max_total and m_c even, sorted by total then m_c.
std::vector<std::pair<int, int>> eig_sweep_configs(int max_total = 6);

/// Trains each configuration of eig_sweep_configs(max_total) in Lusch mode at order 1.
/// `sdp` marks the matching row.
std::vector<EigSweepRow> sweep_eigs(const Dataset& data, const TrainConfig& cfg, const SpectralConfig* sdp,
                                    int jobs = 1, int max_total = 6);

struct OrderSweepRow {
    int order = 0;
    int m_r = 0;
    int m_c = 0;
    std::vector<double> mse_curve;  // test MSE per epoch
    double final_mse = 0.0;
};

/// WithPretrain pipeline per order, with the spectral stage forced to that order.
std::vector<OrderSweepRow> sweep_order(const Dataset& data, const TrainConfig& cfg,
                                       const SpectralOptions& spectral_opts, std::span<const int> orders,
                                       int jobs = 1);

/// Runs fn(0 .. n-1) on up to `jobs` threads. Exceptions are rethrown after all workers finish.
void parallel_for(int n, int jobs, const std::function<void(int)>& fn);

std::string metrics_csv(const ExperimentRecord& rec);
std::string l2_csv(const Eigen::VectorXd& curve);
std::string eig_sweep_csv(std::span<const EigSweepRow> rows);
std::string order_sweep_csv(std::span<const OrderSweepRow> rows);

}  // namespace hkoop
