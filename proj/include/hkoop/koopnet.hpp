#pragma once

// Koopman autoencoder: ReLU MLP encoder/decoder, auxiliary eigenvalue heads, the
// state-dependent block-diagonal Koopman operator they define, the three training
// losses and their exact reverse-mode gradients.
//
// All parameters live in one flat vector so optimisation, freezing and
// checkpointing work on contiguous ranges. Batched quantities are stored
// column-wise (one sample per column).

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "hkoop/dynamics.hpp"
#include "hkoop/spectral.hpp"

namespace hkoop {

struct ParamRange {
    Eigen::Index offset = 0;
    Eigen::Index size = 0;
};

/// Dense ReLU network; the last layer is linear. Layer l maps widths[l] -> widths[l+1].
class Mlp {
public:
    struct Cache {
        std::vector<Eigen::MatrixXd> acts;  // acts[0] is the input, acts.back() the output
    };

    Mlp() = default;
    Mlp(std::vector<int> widths, Eigen::Index offset);

    const std::vector<int>& widths() const { return widths_; }
    int in_dim() const { return widths_.front(); }
    int out_dim() const { return widths_.back(); }
    int layers() const { return static_cast<int>(widths_.size()) - 1; }
    Eigen::Index param_count() const { return count_; }
    ParamRange range() const { return {offset_, count_}; }

    Eigen::Map<const Eigen::MatrixXd> weight(const Eigen::VectorXd& params, int layer) const;
    Eigen::Map<Eigen::MatrixXd> weight(Eigen::VectorXd& params, int layer) const;
    Eigen::Map<const Eigen::VectorXd> bias(const Eigen::VectorXd& params, int layer) const;
    Eigen::Map<Eigen::VectorXd> bias(Eigen::VectorXd& params, int layer) const;

    Eigen::MatrixXd forward(const Eigen::VectorXd& params, const Eigen::MatrixXd& x, Cache* cache = nullptr) const;

    /// Accumulates d(loss)/d(params) into grad and returns d(loss)/d(input)
    /// (empty when need_input_grad is false).
    Eigen::MatrixXd backward(const Eigen::VectorXd& params, const Cache& cache, const Eigen::MatrixXd& dout,
                             Eigen::VectorXd& grad, bool need_input_grad = true) const;

    /// Uniform(-sqrt(6 / fan_in), sqrt(6 / fan_in)) weights, zero biases.
    void init_he_uniform(Eigen::VectorXd& params, std::mt19937_64& rng) const;

private:
    Eigen::Index weight_offset(int layer) const;
    Eigen::Index bias_offset(int layer) const;

    std::vector<int> widths_;
    Eigen::Index offset_ = 0;
    Eigen::Index count_ = 0;
};

struct NetConfig {
    std::vector<int> enc_hidden{80, 80};
    std::vector<int> aux_hidden{32, 32};
};

struct NetShape {
    int state_dim = 2;
    int order = 1;
    int m_r = 0;
    int m_c = 2;
    double dt = 0.02;
    NetConfig config;

    int input_dim() const { return state_dim * order; }
    int latent_dim() const { return m_r + m_c; }
    int head_count() const { return m_r + m_c / 2; }
    void validate() const;
};

/// Latent layout: m_r real coordinates first, then m_c / 2 consecutive pairs.
/// Eigenvalue parameters use the same row layout: mu_j for a real row; (mu, omega)
/// on the two rows of a pair.
class KoopmanNet {
public:
    static KoopmanNet create(const NetShape& shape, std::uint64_t seed);

    const NetShape& shape() const { return shape_; }
    Eigen::VectorXd& params() { return params_; }
    const Eigen::VectorXd& params() const { return params_; }

    const Mlp& encoder() const { return encoder_; }
    const Mlp& decoder() const { return decoder_; }
    const std::vector<Mlp>& heads() const { return heads_; }
    ParamRange encoder_range() const { return encoder_.range(); }
    ParamRange decoder_range() const { return decoder_.range(); }
    ParamRange aux_range() const;

    /// Re-evaluate the heads along the propagated latent path (default) or hold the
    /// operator fixed at the window's initial latent.
    bool koopman_frozen_per_window = false;

    Eigen::MatrixXd encode(const Eigen::MatrixXd& xi) const;
    Eigen::MatrixXd decode(const Eigen::MatrixXd& y) const;
    Eigen::MatrixXd eigen_params(const Eigen::MatrixXd& y) const;

    /// Continuous-time generator dt * blockdiag(mu_j, [[mu, -w], [w, mu]]) at y.
    Eigen::MatrixXd generator(const Eigen::VectorXd& y) const;
    /// exp(generator(y)).
    Eigen::MatrixXd assemble_koopman(const Eigen::VectorXd& y) const;

    /// Applies the block-diagonal operator defined by eig_params to each column of y.
    Eigen::MatrixXd advance(const Eigen::MatrixXd& y, const Eigen::MatrixXd& eig_params) const;
    Eigen::MatrixXd advance(const Eigen::MatrixXd& y) const { return advance(y, eigen_params(y)); }

    /// One-step prediction of the next delay vector for each column of xi.
    Eigen::MatrixXd predict_next(const Eigen::MatrixXd& xi) const;

private:
    NetShape shape_;
    Eigen::VectorXd params_;
    Mlp encoder_;
    Mlp decoder_;
    std::vector<Mlp> heads_;
};

/// xi_k = [x_{k-r+1}; ...; x_k].
Eigen::VectorXd delay_stack(const Trajectory& traj, Eigen::Index k, int r);
/// Column c is xi_{c + r - 1}, for c = 0 .. length - r.
Eigen::MatrixXd delay_matrix(const Trajectory& traj, int r);

/// Single-sample losses. `window` holds xi_k .. xi_{k+t} as columns.
double loss_reconstruct(const KoopmanNet& net, const Eigen::VectorXd& xi);
double loss_linearity(const KoopmanNet& net, const Eigen::MatrixXd& window, int t);
double loss_forward(const KoopmanNet& net, const Eigen::MatrixXd& window, int t);

/// Koopman matrix carrying phi(xi_k) t steps forward, re-assembled at every step
/// (or held fixed when koopman_frozen_per_window).
Eigen::MatrixXd propagate_latent(const KoopmanNet& net, const Eigen::VectorXd& y0, int t);

struct Objective {
    double w_recon = 1.0;
    double w_lin = 1.0;
    double w_fwd = 1.0;
    int t_lin = 8;
    int t_fwd = 4;
    /// Average each multi-step loss over horizons 1..t instead of using t alone.
    bool average_horizons = true;

    int span() const;  // number of future delay vectors a window must provide
};

struct LossTerms {
    double recon = 0.0;
    double lin = 0.0;
    double fwd = 0.0;
    double total = 0.0;
};

/// Batch objective. xs[tau] holds xi_{k+tau} for every sample (columns), tau = 0..span.
/// Each term is a per-sample squared norm averaged over the batch. When grad is
/// non-null it receives the exact gradient of `total` (same layout as params).
LossTerms evaluate_objective(const KoopmanNet& net, std::span<const Eigen::MatrixXd> xs, const Objective& obj,
                             Eigen::VectorXd* grad);

/// Target head outputs (same row layout as eigen_params) for discrete-time
/// eigenvalues: mu = ln|lambda| / dt, omega = arg(lambda) / dt.
Eigen::VectorXd eigen_targets(const NetShape& shape, std::span<const Complex> target_eigs);

/// Squared error of the heads against `targets` at fixed latents y, batch averaged.
/// Only aux parameters receive gradient.
double evaluate_pretrain(const KoopmanNet& net, const Eigen::MatrixXd& y, const Eigen::VectorXd& targets,
                         Eigen::VectorXd* grad);

struct AdamHyper {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    Eigen::VectorXd m;
    Eigen::VectorXd v;
    long step = 0;

    static AdamState zeros(Eigen::Index n) { return {Eigen::VectorXd::Zero(n), Eigen::VectorXd::Zero(n), 0}; }
};

/// Bias-corrected Adam on the listed ranges; everything else is left untouched.
void adam_step(Eigen::VectorXd& params, const Eigen::VectorXd& grads, AdamState& state, double lr,
               std::span<const ParamRange> active, const AdamHyper& hyper = {});

struct Checkpoint {
    KoopmanNet net;
    std::optional<SpectralConfig> spectral;
    std::uint64_t seed = 0;
    std::string phase;
    nlohmann::json extra;  // free-form header fields (normalization, system, ...)
};

/// 8-byte magic "HKOOPCK1", u64 LE header length, JSON header, then the flat
/// parameter vector as little-endian float64.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

nlohmann::json shape_to_json(const NetShape& shape);
NetShape shape_from_json(const nlohmann::json& j);

}  // namespace hkoop
