#pragma once

// Spectral extraction: time-delay Hankel matrices, a nuclear-norm style low-rank
// relaxation with Hankel structure restoration, rank and order selection, and
// HAVOK regression of an approximate Koopman operator.

#include <complex>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "hkoop/dynamics.hpp"

namespace hkoop {

using Complex = std::complex<double>;

/// Block (i, j) (rows i*n .. i*n+n-1, column j) is x_{start+i+j}.
struct HankelMatrix {
    Eigen::MatrixXd mat;
    int r = 0;  // delay block-rows
    int q = 0;  // columns (windows)
    int state_dim = 0;
};

HankelMatrix build_hankel(const Trajectory& traj, int r, int q, int start = 0);

/// Alternates singular-value soft-thresholding at `lam` with anti-diagonal block
/// averaging. The SVT step runs on the column-concatenation of all blocks so they
/// share one low-rank subspace; every returned block is exactly Hankel-structured.
std::vector<Eigen::MatrixXd> denoise_lowrank(std::span<const HankelMatrix> blocks, double lam, int iters);
Eigen::MatrixXd denoise_lowrank(const HankelMatrix& h, double lam, int iters);

/// Restores Hankel structure by averaging each anti-diagonal of r x cols blocks.
Eigen::MatrixXd hankel_project(const Eigen::MatrixXd& m, int state_dim);

/// Gavish-Donoho optimal hard threshold. With no noise level the median singular
/// value calibrates the threshold; an explicit noise_sigma uses the known-noise
/// form. Never returns less than 1.
int estimate_rank(const Eigen::VectorXd& s, Eigen::Index rows, Eigen::Index cols,
                  std::optional<double> noise_sigma = std::nullopt);

struct HavokResult {
    Eigen::MatrixXd koopman;          // rank x rank
    std::vector<Complex> eigs;
    double spectral_radius = 0.0;
    Eigen::MatrixXd basis;            // leading left singular vectors (rows x rank)
    Eigen::VectorXd singular_values;  // all of them, descending
    std::vector<std::string> warnings;

    /// One-step prediction of delay vectors (columns) through the reduced model.
    Eigen::MatrixXd predict(const Eigen::MatrixXd& delay_vectors) const;
};

/// SVD-truncates the concatenated blocks to `rank` and regresses consecutive
/// right-singular coordinates (within each block) by least squares.
HavokResult havok_koopman(std::span<const Eigen::MatrixXd> blocks, int rank);
HavokResult havok_koopman(const HankelMatrix& h, int rank);

struct SpectrumClass {
    int m_r = 0;
    int m_c = 0;
    std::vector<Complex> target_eigs;  // reals first, then (upper, lower) conjugate pairs
};

SpectrumClass classify_spectrum(std::span<const Complex> eigs, double tol_imag);

struct SpectralOptions {
    int r_max = 5;
    double tol_improve = 5e-4;  // in units of held-out delay-vector variance
    double lam_rel = 1e-4;      // SVT threshold relative to the largest singular value
    int denoise_iters = 10;
    double tol_imag = 1e-6;
    int subset_trajectories = 32;
    int heldout_trajectories = 16;
    int window_q = 128;
    std::optional<int> forced_order;

    nlohmann::json to_json() const;
    static SpectralOptions from_json(const nlohmann::json& j);
};

struct OrderCandidate {
    int order = 0;
    int rank = 0;
    double residual = 0.0;  // held-out one-step residual / held-out variance
};

struct SpectralConfig {
    int order_r = 1;
    int m_r = 0;
    int m_c = 0;
    std::vector<Complex> target_eigs;
    Eigen::MatrixXd koopman_init;
    Eigen::VectorXd singular_values;
    std::vector<OrderCandidate> candidates;
    std::vector<std::string> warnings;
    int state_dim = 0;  // 0 when unknown
    double dt = 0.0;
    double runtime_seconds = 0.0;
    // Structured low-rank surrogate of the delay data (diagnostics only).
    Eigen::MatrixXd observables;

    int latent_dim() const { return m_r + m_c; }
    /// One-line summary, e.g. "1 real, 2 complex, order 1".
    std::string summary() const;

    nlohmann::json to_json() const;
    static SpectralConfig from_json(const nlohmann::json& j);
};

/// Runs the delay pipeline for one order on the extraction subset.
struct CandidateFit {
    OrderCandidate summary;
    HavokResult havok;
    Eigen::MatrixXd surrogate;
};
CandidateFit fit_order_candidate(const Dataset& data, int order, const SpectralOptions& opts);

/// Smallest order after which every further improvement of the held-out
/// residual stays below tol_improve.
int estimate_order(const Dataset& data, const SpectralOptions& opts);
int select_order(std::span<const OrderCandidate> candidates, double tol_improve);

SpectralConfig extract_spectral(const Dataset& data, const SpectralOptions& opts = {});

void save_spectral(const SpectralConfig& cfg, const std::filesystem::path& path);
SpectralConfig load_spectral(const std::filesystem::path& path);

}  // namespace hkoop
