#include "hkoop/koopnet.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>

#include "hkoop/errors.hpp"
#include "hkoop/io.hpp"
#include "hkoop/numcore.hpp"

namespace hkoop {

// ---------------------------------------------------------------------------
// Mlp

Mlp::Mlp(std::vector<int> widths, Eigen::Index offset) : widths_(std::move(widths)), offset_(offset) {
    if (widths_.size() < 2) throw ContractViolation("Mlp: need at least input and output widths");
    for (int w : widths_)
        if (w < 1) throw ContractViolation("Mlp: layer widths must be positive");
    for (int l = 0; l < layers(); ++l) count_ += static_cast<Eigen::Index>(widths_[l + 1]) * (widths_[l] + 1);
}

Eigen::Index Mlp::weight_offset(int layer) const {
    Eigen::Index at = offset_;
    for (int l = 0; l < layer; ++l) at += static_cast<Eigen::Index>(widths_[l + 1]) * (widths_[l] + 1);
    return at;
}

Eigen::Index Mlp::bias_offset(int layer) const {
    return weight_offset(layer) + static_cast<Eigen::Index>(widths_[layer + 1]) * widths_[layer];
}

Eigen::Map<const Eigen::MatrixXd> Mlp::weight(const Eigen::VectorXd& params, int layer) const {
    return {params.data() + weight_offset(layer), widths_[layer + 1], widths_[layer]};
}

Eigen::Map<Eigen::MatrixXd> Mlp::weight(Eigen::VectorXd& params, int layer) const {
    return {params.data() + weight_offset(layer), widths_[layer + 1], widths_[layer]};
}

Eigen::Map<const Eigen::VectorXd> Mlp::bias(const Eigen::VectorXd& params, int layer) const {
    return {params.data() + bias_offset(layer), widths_[layer + 1]};
}

Eigen::Map<Eigen::VectorXd> Mlp::bias(Eigen::VectorXd& params, int layer) const {
    return {params.data() + bias_offset(layer), widths_[layer + 1]};
}

Eigen::MatrixXd Mlp::forward(const Eigen::VectorXd& params, const Eigen::MatrixXd& x, Cache* cache) const {
    if (x.rows() != in_dim()) throw ContractViolation("Mlp::forward: input dimension mismatch");
    if (cache) {
        cache->acts.clear();
        cache->acts.reserve(static_cast<std::size_t>(layers()) + 1);
        cache->acts.push_back(x);
    }
    Eigen::MatrixXd a = x;
    for (int l = 0; l < layers(); ++l) {
        Eigen::MatrixXd z = weight(params, l) * a;
        z.colwise() += bias(params, l);
        if (l + 1 < layers()) z = z.cwiseMax(0.0);
        a = std::move(z);
        if (cache) cache->acts.push_back(a);
    }
    return a;
}

Eigen::MatrixXd Mlp::backward(const Eigen::VectorXd& params, const Cache& cache, const Eigen::MatrixXd& dout,
                              Eigen::VectorXd& grad, bool need_input_grad) const {
    Eigen::MatrixXd delta = dout;
    for (int l = layers() - 1; l >= 0; --l) {
        const Eigen::MatrixXd& input = cache.acts[static_cast<std::size_t>(l)];
        weight(grad, l).noalias() += delta * input.transpose();
        bias(grad, l) += delta.rowwise().sum();
        if (l == 0 && !need_input_grad) return {};
        Eigen::MatrixXd dinput = weight(params, l).transpose() * delta;
        // ReLU subgradient at 0 is 0: only strictly positive activations pass.
        if (l > 0) dinput = (input.array() > 0.0).select(dinput, 0.0);
        delta = std::move(dinput);
    }
    return delta;
}

void Mlp::init_he_uniform(Eigen::VectorXd& params, std::mt19937_64& rng) const {
    for (int l = 0; l < layers(); ++l) {
        const double bound = std::sqrt(6.0 / widths_[l]);
        auto w = weight(params, l);
        for (Eigen::Index c = 0; c < w.cols(); ++c)
            for (Eigen::Index r = 0; r < w.rows(); ++r) {
                const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
                w(r, c) = bound * (2.0 * u - 1.0);
            }
        bias(params, l).setZero();
    }
}

// ---------------------------------------------------------------------------
// KoopmanNet

void NetShape::validate() const {
    if (state_dim < 1 || order < 1) throw ConfigError("net shape: state_dim and order must be >= 1");
    if (m_r < 0 || m_c < 0 || m_c % 2 != 0) throw ConfigError("net shape: m_complex must be even and counts nonnegative");
    if (latent_dim() < 1) throw ConfigError("net shape: latent dimension must be >= 1");
    if (!(dt > 0.0)) throw ConfigError("net shape: dt must be positive");
}

KoopmanNet KoopmanNet::create(const NetShape& shape, std::uint64_t seed) {
    shape.validate();
    KoopmanNet net;
    net.shape_ = shape;
    const int d = shape.input_dim();
    const int m = shape.latent_dim();

    std::vector<int> enc{d};
    enc.insert(enc.end(), shape.config.enc_hidden.begin(), shape.config.enc_hidden.end());
    enc.push_back(m);
    std::vector<int> dec{m};
    dec.insert(dec.end(), shape.config.enc_hidden.rbegin(), shape.config.enc_hidden.rend());
    dec.push_back(d);

    Eigen::Index at = 0;
    net.encoder_ = Mlp(enc, at);
    at += net.encoder_.param_count();
    net.decoder_ = Mlp(dec, at);
    at += net.decoder_.param_count();
    for (int h = 0; h < shape.head_count(); ++h) {
        std::vector<int> w{m};
        w.insert(w.end(), shape.config.aux_hidden.begin(), shape.config.aux_hidden.end());
        w.push_back(h < shape.m_r ? 1 : 2);
        net.heads_.emplace_back(w, at);
        at += net.heads_.back().param_count();
    }
    net.params_ = Eigen::VectorXd::Zero(at);

    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), 0x6b6f6f70u};
    std::mt19937_64 rng(seq);
    net.encoder_.init_he_uniform(net.params_, rng);
    net.decoder_.init_he_uniform(net.params_, rng);
    for (const auto& h : net.heads_) h.init_he_uniform(net.params_, rng);
    return net;
}

ParamRange KoopmanNet::aux_range() const {
    const Eigen::Index start = decoder_.range().offset + decoder_.range().size;
    return {start, params_.size() - start};
}

Eigen::MatrixXd KoopmanNet::encode(const Eigen::MatrixXd& xi) const { return encoder_.forward(params_, xi); }

Eigen::MatrixXd KoopmanNet::decode(const Eigen::MatrixXd& y) const { return decoder_.forward(params_, y); }

namespace {

// Row of the eigenvalue-parameter matrix where head h starts.
int head_row(const NetShape& s, int h) { return h < s.m_r ? h : s.m_r + 2 * (h - s.m_r); }

}  // namespace

Eigen::MatrixXd KoopmanNet::eigen_params(const Eigen::MatrixXd& y) const {
    Eigen::MatrixXd out(shape_.latent_dim(), y.cols());
    for (int h = 0; h < static_cast<int>(heads_.size()); ++h) {
        const auto& head = heads_[static_cast<std::size_t>(h)];
        out.middleRows(head_row(shape_, h), head.out_dim()) = head.forward(params_, y);
    }
    return out;
}

Eigen::MatrixXd KoopmanNet::generator(const Eigen::VectorXd& y) const {
    const Eigen::VectorXd p = eigen_params(y);
    const int m = shape_.latent_dim();
    const double dt = shape_.dt;
    Eigen::MatrixXd g = Eigen::MatrixXd::Zero(m, m);
    for (int i = 0; i < shape_.m_r; ++i) g(i, i) = dt * p(i);
    for (int i = shape_.m_r; i < m; i += 2) {
        g(i, i) = g(i + 1, i + 1) = dt * p(i);
        g(i + 1, i) = dt * p(i + 1);
        g(i, i + 1) = -dt * p(i + 1);
    }
    return g;
}

Eigen::MatrixXd KoopmanNet::assemble_koopman(const Eigen::VectorXd& y) const {
    const Eigen::MatrixXd g = generator(y);
    if (!g.allFinite()) throw NumericalFailure("assemble_koopman: auxiliary network produced a non-finite eigenvalue");
    return matexp(g);
}

Eigen::MatrixXd KoopmanNet::advance(const Eigen::MatrixXd& y, const Eigen::MatrixXd& p) const {
    const int m = shape_.latent_dim();
    const double dt = shape_.dt;
    Eigen::MatrixXd out(m, y.cols());
    for (int i = 0; i < shape_.m_r; ++i) out.row(i) = ((dt * p.row(i)).array().exp() * y.row(i).array()).matrix();
    for (int i = shape_.m_r; i < m; i += 2) {
        const Eigen::ArrayXXd growth = (dt * p.row(i)).array().exp();
        const Eigen::ArrayXXd c = (dt * p.row(i + 1)).array().cos();
        const Eigen::ArrayXXd s = (dt * p.row(i + 1)).array().sin();
        const Eigen::ArrayXXd a = y.row(i).array();
        const Eigen::ArrayXXd b = y.row(i + 1).array();
        out.row(i) = (growth * (c * a - s * b)).matrix();
        out.row(i + 1) = (growth * (s * a + c * b)).matrix();
    }
    return out;
}

Eigen::MatrixXd KoopmanNet::predict_next(const Eigen::MatrixXd& xi) const { return decode(advance(encode(xi))); }

// ---------------------------------------------------------------------------
// Delay coordinates and single-sample losses

Eigen::VectorXd delay_stack(const Trajectory& traj, Eigen::Index k, int r) {
    if (r < 1) throw ContractViolation("delay_stack: order must be >= 1");
    if (k < r - 1 || k >= traj.length())
        throw ContractViolation("delay_stack: index " + std::to_string(k) + " out of range for order " + std::to_string(r));
    const Eigen::Index n = traj.dim();
    Eigen::VectorXd xi(n * r);
    for (int i = 0; i < r; ++i) xi.segment(i * n, n) = traj.states.col(k - r + 1 + i);
    return xi;
}

Eigen::MatrixXd delay_matrix(const Trajectory& traj, int r) {
    if (traj.length() < r) throw ContractViolation("delay_matrix: trajectory shorter than order");
    const Eigen::Index n = traj.dim();
    const Eigen::Index cols = traj.length() - r + 1;
    Eigen::MatrixXd out(n * r, cols);
    for (int i = 0; i < r; ++i) out.middleRows(i * n, n) = traj.states.middleCols(i, cols);
    return out;
}

Eigen::MatrixXd propagate_latent(const KoopmanNet& net, const Eigen::VectorXd& y0, int t) {
    const int m = net.shape().latent_dim();
    Eigen::MatrixXd k = Eigen::MatrixXd::Identity(m, m);
    Eigen::VectorXd y = y0;
    const Eigen::MatrixXd fixed = net.assemble_koopman(y0);
    for (int s = 0; s < t; ++s) {
        const Eigen::MatrixXd step = net.koopman_frozen_per_window ? fixed : net.assemble_koopman(y);
        k = step * k;
        y = step * y;
    }
    return k;
}

double loss_reconstruct(const KoopmanNet& net, const Eigen::VectorXd& xi) {
    return (xi - net.decode(net.encode(xi))).squaredNorm();
}

double loss_linearity(const KoopmanNet& net, const Eigen::MatrixXd& window, int t) {
    if (t < 0 || window.cols() < t + 1) throw ContractViolation("loss_linearity: window must hold xi_k .. xi_{k+t}");
    if (t == 0) return 0.0;
    const Eigen::VectorXd y0 = net.encode(window.col(0));
    const Eigen::VectorXd yt = net.encode(window.col(t));
    return (yt - propagate_latent(net, y0, t) * y0).squaredNorm();
}

double loss_forward(const KoopmanNet& net, const Eigen::MatrixXd& window, int t) {
    if (t < 0 || window.cols() < t + 1) throw ContractViolation("loss_forward: window must hold xi_k .. xi_{k+t}");
    const Eigen::VectorXd y0 = net.encode(window.col(0));
    const Eigen::VectorXd yt = propagate_latent(net, y0, t) * y0;
    return (window.col(t) - net.decode(yt)).squaredNorm();
}

// ---------------------------------------------------------------------------
// Batch objective with reverse-mode gradient

int Objective::span() const { return std::max({0, t_lin, t_fwd}); }

namespace {

std::vector<int> horizons(int t, bool average) {
    std::vector<int> out;
    if (t <= 0) return out;
    if (average)
        for (int s = 1; s <= t; ++s) out.push_back(s);
    else
        out.push_back(t);
    return out;
}

Eigen::MatrixXd hstack(const std::vector<const Eigen::MatrixXd*>& parts) {
    Eigen::Index cols = 0;
    for (const auto* p : parts) cols += p->cols();
    Eigen::MatrixXd out(parts.front()->rows(), cols);
    Eigen::Index at = 0;
    for (const auto* p : parts) {
        out.middleCols(at, p->cols()) = *p;
        at += p->cols();
    }
    return out;
}

struct HeadCaches {
    std::vector<Mlp::Cache> per_head;
};

Eigen::MatrixXd heads_forward(const KoopmanNet& net, const Eigen::MatrixXd& y, HeadCaches& caches) {
    const auto& shape = net.shape();
    Eigen::MatrixXd out(shape.latent_dim(), y.cols());
    caches.per_head.resize(net.heads().size());
    for (int h = 0; h < static_cast<int>(net.heads().size()); ++h) {
        const auto& head = net.heads()[static_cast<std::size_t>(h)];
        out.middleRows(head_row(shape, h), head.out_dim()) =
            head.forward(net.params(), y, &caches.per_head[static_cast<std::size_t>(h)]);
    }
    if (!out.allFinite()) throw NumericalFailure("auxiliary network produced a non-finite eigenvalue");
    return out;
}

// Returns d/d(head input) and accumulates head parameter gradients.
Eigen::MatrixXd heads_backward(const KoopmanNet& net, const HeadCaches& caches, const Eigen::MatrixXd& dparams,
                               Eigen::VectorXd& grad) {
    const auto& shape = net.shape();
    Eigen::MatrixXd dy = Eigen::MatrixXd::Zero(shape.latent_dim(), dparams.cols());
    for (int h = 0; h < static_cast<int>(net.heads().size()); ++h) {
        const auto& head = net.heads()[static_cast<std::size_t>(h)];
        dy += head.backward(net.params(), caches.per_head[static_cast<std::size_t>(h)],
                            dparams.middleRows(head_row(shape, h), head.out_dim()), grad);
    }
    return dy;
}

// Given g = dL/d(next) for next = advance(y, p), returns dL/dy and writes dL/dp.
Eigen::MatrixXd advance_backward(const NetShape& shape, const Eigen::MatrixXd& y, const Eigen::MatrixXd& p,
                                 const Eigen::MatrixXd& next, const Eigen::MatrixXd& g, Eigen::MatrixXd& dp) {
    const int m = shape.latent_dim();
    const double dt = shape.dt;
    Eigen::MatrixXd dy(m, y.cols());
    dp.resize(m, y.cols());
    for (int i = 0; i < shape.m_r; ++i) {
        const Eigen::ArrayXXd growth = (dt * p.row(i)).array().exp();
        dy.row(i) = (growth * g.row(i).array()).matrix();
        dp.row(i) = (dt * g.row(i).array() * next.row(i).array()).matrix();
    }
    for (int i = shape.m_r; i < m; i += 2) {
        const Eigen::ArrayXXd growth = (dt * p.row(i)).array().exp();
        const Eigen::ArrayXXd c = (dt * p.row(i + 1)).array().cos();
        const Eigen::ArrayXXd s = (dt * p.row(i + 1)).array().sin();
        const Eigen::ArrayXXd ga = g.row(i).array();
        const Eigen::ArrayXXd gb = g.row(i + 1).array();
        const Eigen::ArrayXXd na = next.row(i).array();
        const Eigen::ArrayXXd nb = next.row(i + 1).array();
        dy.row(i) = (growth * (c * ga + s * gb)).matrix();
        dy.row(i + 1) = (growth * (c * gb - s * ga)).matrix();
        dp.row(i) = (dt * (ga * na + gb * nb)).matrix();
        dp.row(i + 1) = (dt * (gb * na - ga * nb)).matrix();
    }
    return dy;
}

}  // namespace

LossTerms evaluate_objective(const KoopmanNet& net, std::span<const Eigen::MatrixXd> xs, const Objective& obj,
                             Eigen::VectorXd* grad) {
    if (xs.empty()) throw ContractViolation("evaluate_objective: no inputs");
    const auto& shape = net.shape();
    const Eigen::Index batch = xs[0].cols();
    const double inv_b = 1.0 / static_cast<double>(batch);
    const int m = shape.latent_dim();

    const auto h_lin = obj.w_lin != 0.0 ? horizons(obj.t_lin, obj.average_horizons) : std::vector<int>{};
    const auto h_fwd = obj.w_fwd != 0.0 ? horizons(obj.t_fwd, obj.average_horizons) : std::vector<int>{};
    const int t_lin = h_lin.empty() ? 0 : h_lin.back();
    const int t_fwd = h_fwd.empty() ? 0 : h_fwd.back();
    const int t_prop = std::max(t_lin, t_fwd);
    if (static_cast<int>(xs.size()) <= t_prop) throw ContractViolation("evaluate_objective: window too short");

    // Encoder on xi_0 and every linearity target, in one batched pass.
    std::vector<const Eigen::MatrixXd*> enc_in{&xs[0]};
    for (int t : h_lin) enc_in.push_back(&xs[static_cast<std::size_t>(t)]);
    Mlp::Cache enc_cache;
    const Eigen::MatrixXd enc_out = net.encoder().forward(net.params(), hstack(enc_in), &enc_cache);
    const Eigen::MatrixXd y0 = enc_out.leftCols(batch);

    // Latent propagation with per-step (or per-window) operators.
    std::vector<Eigen::MatrixXd> z{y0};
    std::vector<Eigen::MatrixXd> eig_p;
    std::vector<HeadCaches> head_caches;
    const bool frozen = net.koopman_frozen_per_window;
    for (int t = 1; t <= t_prop; ++t) {
        if (t == 1 || !frozen) {
            head_caches.emplace_back();
            eig_p.push_back(heads_forward(net, z.back(), head_caches.back()));
        }
        z.push_back(net.advance(z.back(), eig_p.back()));
    }

    // Decoder on y0 (reconstruction) and every forward-loss prediction.
    std::vector<const Eigen::MatrixXd*> dec_in;
    if (obj.w_recon != 0.0) dec_in.push_back(&y0);
    for (int t : h_fwd) dec_in.push_back(&z[static_cast<std::size_t>(t)]);
    Mlp::Cache dec_cache;
    Eigen::MatrixXd dec_out;
    if (!dec_in.empty()) dec_out = net.decoder().forward(net.params(), hstack(dec_in), &dec_cache);

    LossTerms terms;
    Eigen::MatrixXd d_dec_out;
    if (grad) d_dec_out.resize(dec_out.rows(), dec_out.cols());
    Eigen::Index col = 0;
    if (obj.w_recon != 0.0) {
        const Eigen::MatrixXd diff = dec_out.leftCols(batch) - xs[0];
        terms.recon = diff.squaredNorm() * inv_b;
        if (grad) d_dec_out.leftCols(batch) = (2.0 * obj.w_recon * inv_b) * diff;
        col += batch;
    }
    if (!h_fwd.empty()) {
        const double scale = 1.0 / static_cast<double>(h_fwd.size());
        for (int t : h_fwd) {
            const Eigen::MatrixXd diff = dec_out.middleCols(col, batch) - xs[static_cast<std::size_t>(t)];
            terms.fwd += scale * diff.squaredNorm() * inv_b;
            if (grad) d_dec_out.middleCols(col, batch) = (2.0 * obj.w_fwd * scale * inv_b) * diff;
            col += batch;
        }
    }
    std::vector<Eigen::MatrixXd> lin_diff;
    if (!h_lin.empty()) {
        const double scale = 1.0 / static_cast<double>(h_lin.size());
        for (std::size_t i = 0; i < h_lin.size(); ++i) {
            lin_diff.push_back(enc_out.middleCols(static_cast<Eigen::Index>(i + 1) * batch, batch) -
                               z[static_cast<std::size_t>(h_lin[i])]);
            terms.lin += scale * lin_diff.back().squaredNorm() * inv_b;
        }
    }
    terms.total = obj.w_recon * terms.recon + obj.w_lin * terms.lin + obj.w_fwd * terms.fwd;
    if (!grad) return terms;

    if (grad->size() != net.params().size()) *grad = Eigen::VectorXd::Zero(net.params().size());

    // Decoder backward: gradients w.r.t. y0 and the propagated latents.
    std::vector<Eigen::MatrixXd> dz(static_cast<std::size_t>(t_prop) + 1, Eigen::MatrixXd::Zero(m, batch));
    Eigen::MatrixXd d_enc_out = Eigen::MatrixXd::Zero(m, enc_out.cols());
    if (!dec_in.empty()) {
        const Eigen::MatrixXd d_dec_in = net.decoder().backward(net.params(), dec_cache, d_dec_out, *grad);
        col = 0;
        if (obj.w_recon != 0.0) {
            d_enc_out.leftCols(batch) += d_dec_in.leftCols(batch);
            col += batch;
        }
        for (int t : h_fwd) {
            dz[static_cast<std::size_t>(t)] += d_dec_in.middleCols(col, batch);
            col += batch;
        }
    }
    if (!h_lin.empty()) {
        const double c = 2.0 * obj.w_lin * inv_b / static_cast<double>(h_lin.size());
        for (std::size_t i = 0; i < h_lin.size(); ++i) {
            d_enc_out.middleCols(static_cast<Eigen::Index>(i + 1) * batch, batch) += c * lin_diff[i];
            dz[static_cast<std::size_t>(h_lin[i])] -= c * lin_diff[i];
        }
    }

    // Back through the propagation chain.
    Eigen::MatrixXd dp_frozen;
    if (frozen && t_prop > 0) dp_frozen = Eigen::MatrixXd::Zero(m, batch);
    for (int t = t_prop; t >= 1; --t) {
        const auto ti = static_cast<std::size_t>(t);
        const std::size_t pi = frozen ? 0 : ti - 1;
        Eigen::MatrixXd dp;
        dz[ti - 1] += advance_backward(shape, z[ti - 1], eig_p[pi], z[ti], dz[ti], dp);
        if (frozen)
            dp_frozen += dp;
        else
            dz[ti - 1] += heads_backward(net, head_caches[pi], dp, *grad);
    }
    if (frozen && t_prop > 0) dz[0] += heads_backward(net, head_caches[0], dp_frozen, *grad);

    d_enc_out.leftCols(batch) += dz[0];
    net.encoder().backward(net.params(), enc_cache, d_enc_out, *grad, false);
    return terms;
}

// ---------------------------------------------------------------------------
// Pretraining targets

Eigen::VectorXd eigen_targets(const NetShape& shape, std::span<const Complex> target_eigs) {
    const auto cls = classify_spectrum(target_eigs, 0.0);
    if (cls.m_r != shape.m_r || cls.m_c != shape.m_c)
        throw ConfigError("eigen_targets: spectral configuration (" + std::to_string(cls.m_r) + " real, " +
                          std::to_string(cls.m_c) + " complex) does not match the network");
    auto log_mag = [](const Complex& z) { return std::log(std::max(std::abs(z), 1e-12)); };
    Eigen::VectorXd out(shape.latent_dim());
    std::size_t e = 0;
    for (int i = 0; i < shape.m_r; ++i, ++e) out(i) = log_mag(cls.target_eigs[e]) / shape.dt;
    for (int i = shape.m_r; i < shape.latent_dim(); i += 2, e += 2) {
        const Complex z = cls.target_eigs[e];
        out(i) = log_mag(z) / shape.dt;
        out(i + 1) = std::arg(z) / shape.dt;
    }
    return out;
}

double evaluate_pretrain(const KoopmanNet& net, const Eigen::MatrixXd& y, const Eigen::VectorXd& targets,
                         Eigen::VectorXd* grad) {
    HeadCaches caches;
    const Eigen::MatrixXd p = heads_forward(net, y, caches);
    const Eigen::MatrixXd diff = p.colwise() - targets;
    const double inv_b = 1.0 / static_cast<double>(y.cols());
    if (grad) {
        if (grad->size() != net.params().size()) *grad = Eigen::VectorXd::Zero(net.params().size());
        const Eigen::MatrixXd dp = (2.0 * inv_b) * diff;
        for (int h = 0; h < static_cast<int>(net.heads().size()); ++h) {
            const auto& head = net.heads()[static_cast<std::size_t>(h)];
            head.backward(net.params(), caches.per_head[static_cast<std::size_t>(h)],
                          dp.middleRows(head_row(net.shape(), h), head.out_dim()), *grad, false);
        }
    }
    return diff.squaredNorm() * inv_b;
}

// ---------------------------------------------------------------------------
// Adam

void adam_step(Eigen::VectorXd& params, const Eigen::VectorXd& grads, AdamState& state, double lr,
               std::span<const ParamRange> active, const AdamHyper& hyper) {
    if (grads.size() != params.size()) throw ContractViolation("adam_step: gradient size mismatch");
    if (state.m.size() != params.size()) state = AdamState::zeros(params.size());
    ++state.step;
    const double c1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(state.step));
    for (const auto& r : active) {
        auto m = state.m.segment(r.offset, r.size);
        auto v = state.v.segment(r.offset, r.size);
        const auto g = grads.segment(r.offset, r.size);
        m = hyper.beta1 * m + (1.0 - hyper.beta1) * g;
        v = hyper.beta2 * v + (1.0 - hyper.beta2) * g.cwiseAbs2();
        params.segment(r.offset, r.size).array() -=
            lr * (m.array() / c1) / ((v.array() / c2).sqrt() + hyper.eps);
    }
}

// ---------------------------------------------------------------------------
// Checkpoints

nlohmann::json shape_to_json(const NetShape& s) {
    return {{"state_dim", s.state_dim}, {"order", s.order},   {"m_real", s.m_r},
            {"m_complex", s.m_c},       {"dt", s.dt},         {"enc_hidden", s.config.enc_hidden},
            {"aux_hidden", s.config.aux_hidden}};
}

NetShape shape_from_json(const nlohmann::json& j) {
    NetShape s;
    try {
        s.state_dim = j.at("state_dim").get<int>();
        s.order = j.at("order").get<int>();
        s.m_r = j.at("m_real").get<int>();
        s.m_c = j.at("m_complex").get<int>();
        s.dt = j.at("dt").get<double>();
        s.config.enc_hidden = j.at("enc_hidden").get<std::vector<int>>();
        s.config.aux_hidden = j.at("aux_hidden").get<std::vector<int>>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("architecture: ") + e.what());
    }
    s.validate();
    return s;
}

namespace {

constexpr char kMagic[8] = {'H', 'K', 'O', 'O', 'P', 'C', 'K', '1'};

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

std::uint64_t get_u64(const std::string& in, std::size_t at) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
    return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    nlohmann::json header = ckpt.extra.is_object() ? ckpt.extra : nlohmann::json::object();
    header["format"] = "hkoop-checkpoint";
    header["version"] = 1;
    header["architecture"] = shape_to_json(ckpt.net.shape());
    header["koopman_frozen_per_window"] = ckpt.net.koopman_frozen_per_window;
    header["param_count"] = ckpt.net.params().size();
    header["seed"] = ckpt.seed;
    header["phase"] = ckpt.phase;
    header["spectral"] = ckpt.spectral ? ckpt.spectral->to_json() : nlohmann::json(nullptr);
    const std::string text = header.dump();

    std::string out(kMagic, sizeof(kMagic));
    put_u64(out, text.size());
    out += text;
    const auto& p = ckpt.net.params();
    out.reserve(out.size() + 8 * static_cast<std::size_t>(p.size()));
    for (Eigen::Index i = 0; i < p.size(); ++i) put_u64(out, std::bit_cast<std::uint64_t>(p(i)));
    atomic_write(path, out);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    const std::string raw = read_file(path);
    if (raw.size() < 16 || raw.compare(0, 8, std::string(kMagic, 8)) != 0)
        throw ConfigError("not a checkpoint file: " + path.string());
    const std::uint64_t len = get_u64(raw, 8);
    if (16 + len > raw.size()) throw ConfigError("truncated checkpoint header: " + path.string());
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(raw.substr(16, len));
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(std::string("corrupt checkpoint header: ") + e.what());
    }
    Checkpoint ck;
    ck.net = KoopmanNet::create(shape_from_json(header.at("architecture")), 0);
    ck.net.koopman_frozen_per_window = header.value("koopman_frozen_per_window", false);
    const auto count = header.at("param_count").get<std::uint64_t>();
    if (count != static_cast<std::uint64_t>(ck.net.params().size()))
        throw ConfigError("checkpoint parameter count does not match its architecture");
    const std::size_t body = 16 + len;
    if (raw.size() != body + 8 * count) throw ConfigError("checkpoint parameter block has the wrong size");
    for (std::uint64_t i = 0; i < count; ++i)
        ck.net.params()(static_cast<Eigen::Index>(i)) = std::bit_cast<double>(get_u64(raw, body + 8 * i));
    ck.seed = header.value("seed", std::uint64_t{0});
    ck.phase = header.value("phase", std::string{});
    if (!header["spectral"].is_null()) ck.spectral = SpectralConfig::from_json(header["spectral"]);
    ck.extra = header;
    return ck;
}

}  // namespace hkoop
