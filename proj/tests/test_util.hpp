#pragma once

#include <cstdint>

#include "mscrub/linalg.hpp"
#include "mscrub/rng.hpp"

namespace mscrub::testing {

[[nodiscard]] inline Eigen::MatrixXd random_matrix(Index rows, Index cols, std::uint64_t seed) {
    CounterRng rng(seed, 77);
    Eigen::MatrixXd m(rows, cols);
    for (Index i = 0; i < rows; ++i) {
        for (Index j = 0; j < cols; ++j) {
            m(i, j) = rng.normal();
        }
    }
    return m;
}

/// Well-conditioned random SPD: G Gᵀ/d + ridge·I.
[[nodiscard]] inline SymMatrixd random_spd(Index d, std::uint64_t seed, double ridge = 0.1) {
    const auto g = random_matrix(d, d, seed);
    return SymMatrixd(g * g.transpose() / static_cast<double>(d) + ridge * Eigen::MatrixXd::Identity(d, d));
}

/// Dominant |eigenvalue| by power iteration on M² (sign-free).
[[nodiscard]] inline double power_iteration_norm(const Eigen::MatrixXd& m, int iters = 5000) {
    Eigen::VectorXd v = Eigen::VectorXd::Ones(m.rows()) + random_matrix(m.rows(), 1, 4242);
    const Eigen::MatrixXd sq = m * m;
    double est = 0.0;
    for (int i = 0; i < iters; ++i) {
        const Eigen::VectorXd w = sq * v;
        const double nrm = w.norm();
        if (nrm == 0.0) {
            return 0.0;
        }
        est = std::sqrt(nrm / v.norm());
        v = w / nrm;
    }
    return est;
}

} // namespace mscrub::testing
