#pragma once

#include <cmath>
#include <functional>
#include <random>

#include <Eigen/Dense>

#include "hkoop/koopnet.hpp"

namespace hkoop::test {

inline Eigen::MatrixXd random_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n;
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = n(rng);
    return m;
}

/// Largest relative error between the analytic gradient and central differences of f.
/// Components far below the gradient scale are compared against 1e-3 of its largest entry.
inline double gradient_error(Eigen::VectorXd& params, const Eigen::VectorXd& grad,
                             const std::function<double()>& f, double h = 1e-5) {
    double worst = 0.0;
    const double floor = std::max(1e-12, 1e-3 * grad.cwiseAbs().maxCoeff());
    for (Eigen::Index i = 0; i < params.size(); ++i) {
        const double p0 = params(i);
        params(i) = p0 + h;
        const double up = f();
        params(i) = p0 - h;
        const double down = f();
        params(i) = p0;
        const double fd = (up - down) / (2.0 * h);
        const double scale = std::max(floor, std::abs(fd) + std::abs(grad(i)));
        worst = std::max(worst, std::abs(fd - grad(i)) / scale);
    }
    return worst;
}

/// Encoder and decoder realise the identity through one ReLU layer [x; -x];
/// every head outputs a constant.
inline KoopmanNet planted_identity_net(int dim, int m_r, int m_c, double dt, const Eigen::VectorXd& head_values) {
    NetShape s;
    s.state_dim = dim;
    s.order = 1;
    s.m_r = m_r;
    s.m_c = m_c;
    s.dt = dt;
    s.config.enc_hidden = {2 * dim};
    s.config.aux_hidden = {3};
    KoopmanNet net = KoopmanNet::create(s, 0);
    auto& p = net.params();
    Eigen::MatrixXd split(2 * dim, dim);
    split << Eigen::MatrixXd::Identity(dim, dim), -Eigen::MatrixXd::Identity(dim, dim);
    Eigen::MatrixXd merge(dim, 2 * dim);
    merge << Eigen::MatrixXd::Identity(dim, dim), -Eigen::MatrixXd::Identity(dim, dim);
    for (const Mlp* mlp : {&net.encoder(), &net.decoder()}) {
        mlp->weight(p, 0) = split;
        mlp->bias(p, 0).setZero();
        mlp->weight(p, 1) = merge;
        mlp->bias(p, 1).setZero();
    }
    Eigen::Index row = 0;
    for (const auto& head : net.heads()) {
        for (int l = 0; l < head.layers(); ++l) head.weight(p, l).setZero();
        head.bias(p, head.layers() - 1) = head_values.segment(row, head.out_dim());
        row += head.out_dim();
    }
    return net;
}

}  // namespace hkoop::test
