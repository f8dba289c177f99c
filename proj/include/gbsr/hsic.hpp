#ifndef GBSR_HSIC_HPP
#define GBSR_HSIC_HPP

#include "gbsr/common.hpp"
#include "gbsr/data.hpp"

#include <atomic>
#include <span>
#include <string>
#include <vector>

namespace gbsr::hsic {

/// Number of hsic_estimate evaluations in this process (instrumentation for
/// ablation-path tests).
inline std::atomic<std::uint64_t>& evaluation_counter() {
    static std::atomic<std::uint64_t> counter{0};
    return counter;
}

/// K_ij = exp(-|x_i - x_j|^2 / (2 sigma2)), unit diagonal.
inline Matrix rbf_kernel(const Matrix& x, double sigma2) {
    if (!(sigma2 > 0.0)) {
        throw ConfigError("rbf_kernel: sigma2 must be positive");
    }
    if (x.rows() < 2) {
        throw ConfigError("rbf_kernel: need at least 2 samples");
    }
    const Eigen::Index n = x.rows();
    Matrix k(n, n);
    parallel_for(static_cast<std::size_t>(n), [&](std::size_t begin, std::size_t end) {
        for (auto i = static_cast<Eigen::Index>(begin); i < static_cast<Eigen::Index>(end); ++i) {
            k(i, i) = 1.0;
            for (Eigen::Index j = 0; j < n; ++j) {
                if (j != i) {
                    k(i, j) = std::exp(-(x.row(i) - x.row(j)).squaredNorm() / (2.0 * sigma2));
                }
            }
        }
    }, 16);
    return k;
}

/// H K H without forming H: subtract row and column means, add the grand mean.
inline Matrix double_center(const Matrix& k) {
    const Vector row_mean = k.rowwise().mean();
    const Vector col_mean = k.colwise().mean().transpose();
    const double grand = k.mean();
    Matrix c = k;
    c.colwise() -= row_mean;
    c.rowwise() -= col_mean.transpose();
    c.array() += grand;
    return c;
}

/// Biased estimator (n-1)^-2 Tr(Kx H Ky H).
inline double hsic_estimate(const Matrix& kx, const Matrix& ky) {
    if (kx.rows() != ky.rows() || kx.cols() != ky.cols() || kx.rows() != kx.cols()) {
        throw ConfigError("hsic_estimate: kernel size mismatch");
    }
    if (kx.rows() < 2) {
        throw ConfigError("hsic_estimate: need n >= 2");
    }
    evaluation_counter().fetch_add(1, std::memory_order_relaxed);
    const double n1 = static_cast<double>(kx.rows() - 1);
    // Tr(Kx H Ky H) = sum_ij Kx_ij (H Ky H)_ij since both are symmetric.
    return kx.cwiseProduct(double_center(ky)).sum() / (n1 * n1);
}

/// Row-wise L2 normalization; zero rows stay zero.
inline Matrix normalize_rows(const Matrix& x) {
    Matrix out = x;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const double nrm = x.row(i).norm();
        out.row(i) /= std::max(nrm, 1e-12);
    }
    return out;
}

struct BottleneckOptions {
    double sigma2 = 0.25;
    bool normalize = true;
};

/// Sorted distinct users; throws when fewer than two remain.
inline std::vector<UserId> distinct_users(std::span<const UserId> users) {
    std::vector<UserId> out(users.begin(), users.end());
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    if (out.size() < 2) {
        throw ConfigError("bottleneck loss needs at least 2 distinct users, got " + std::to_string(out.size()));
    }
    return out;
}

inline Matrix gather_rows(const Matrix& m, std::span<const UserId> rows) {
    Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
    for (std::size_t r = 0; r < rows.size(); ++r) {
        out.row(static_cast<Eigen::Index>(r)) = m.row(rows[r]);
    }
    return out;
}

/// HSIC between the batch-user rows of two representation matrices.
inline double bottleneck_loss(const Matrix& reps_denoised, const Matrix& reps_original, std::span<const UserId> batch_users,
                              const BottleneckOptions& opt) {
    const auto users = distinct_users(batch_users);
    Matrix xd = gather_rows(reps_denoised, users);
    Matrix xo = gather_rows(reps_original, users);
    if (opt.normalize) {
        xd = normalize_rows(xd);
        xo = normalize_rows(xo);
    }
    return hsic_estimate(rbf_kernel(xd, opt.sigma2), rbf_kernel(xo, opt.sigma2));
}

struct BottleneckGrad {
    double value = 0.0;
    std::vector<UserId> users;
    /// dL/d(row) for each entry of `users`, before scattering.
    Matrix denoised_rows;
    Matrix original_rows;
};

namespace detail {

// Gradient of sum_ij G_ij K_ij w.r.t. the sample rows, K = rbf(x).
inline Matrix rbf_backward(const Matrix& x, const Matrix& k, const Matrix& g, double sigma2) {
    // d/dx_i = -(2/sigma2) * sum_j G_ij K_ij (x_i - x_j)   (G symmetric)
    const Matrix gk = g.cwiseProduct(k);
    const Vector rs = gk.rowwise().sum();
    Matrix out = gk * x;
    out = (out - rs.asDiagonal() * x) * (2.0 / sigma2);
    return out;
}

inline Matrix normalize_backward(const Matrix& raw, const Matrix& grad) {
    Matrix out(raw.rows(), raw.cols());
    for (Eigen::Index i = 0; i < raw.rows(); ++i) {
        const double nrm = std::max(raw.row(i).norm(), 1e-12);
        const auto y = raw.row(i) / nrm;
        out.row(i) = (grad.row(i) - y * y.dot(grad.row(i))) / nrm;
    }
    return out;
}

} // namespace detail

/// Value of bottleneck_loss plus gradients with respect to the gathered rows.
inline BottleneckGrad bottleneck_loss_with_grad(const Matrix& reps_denoised, const Matrix& reps_original,
                                                std::span<const UserId> batch_users, const BottleneckOptions& opt) {
    BottleneckGrad out;
    out.users = distinct_users(batch_users);
    const Matrix rd = gather_rows(reps_denoised, out.users);
    const Matrix ro = gather_rows(reps_original, out.users);
    const Matrix xd = opt.normalize ? normalize_rows(rd) : rd;
    const Matrix xo = opt.normalize ? normalize_rows(ro) : ro;
    const Matrix kd = rbf_kernel(xd, opt.sigma2);
    const Matrix ko = rbf_kernel(xo, opt.sigma2);
    out.value = hsic_estimate(kd, ko);
    const double n1 = static_cast<double>(out.users.size() - 1);
    const double scale = 1.0 / (n1 * n1);
    const Matrix gd = double_center(ko) * scale;
    const Matrix go = double_center(kd) * scale;
    Matrix dxd = detail::rbf_backward(xd, kd, gd, opt.sigma2);
    Matrix dxo = detail::rbf_backward(xo, ko, go, opt.sigma2);
    out.denoised_rows = opt.normalize ? detail::normalize_backward(rd, dxd) : dxd;
    out.original_rows = opt.normalize ? detail::normalize_backward(ro, dxo) : dxo;
    return out;
}

} // namespace gbsr::hsic

#endif
