#include "confide/gp.hpp"

#include <cmath>
#include <stdexcept>

namespace confide {

namespace {

Eigen::MatrixXd se_covariance(const std::vector<double>& xs, const std::vector<double>& ys,
                              const GpSpec& spec) {
    const size_t n = xs.size();
    const double s2 = spec.sigma * spec.sigma;
    const double inv_2l2 = 1.0 / (2.0 * spec.length_scale * spec.length_scale);
    Eigen::MatrixXd k(n, n);
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j <= i; ++j) {
            const double dx = xs[i] - xs[j];
            const double dy = ys[i] - ys[j];
            const double v = s2 * std::exp(-(dx * dx + dy * dy) * inv_2l2);
            k(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v;
            k(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = v;
        }
    return k;
}

Eigen::MatrixXd chol_with_jitter(Eigen::MatrixXd k, double jitter0) {
    double jitter = jitter0;
    for (int attempt = 0; attempt < 3; ++attempt, jitter *= 100.0) {
        Eigen::MatrixXd kj = k;
        kj.diagonal().array() += jitter;
        Eigen::LLT<Eigen::MatrixXd> llt(kj);
        if (llt.info() == Eigen::Success) return llt.matrixL();
    }
    throw std::runtime_error("gp: covariance not positive definite after jitter escalation");
}

}  // namespace

GpSampler GpSampler::line(const GpSpec& spec, int n_points, double dx) {
    if (n_points < 2) throw std::invalid_argument("gp: need at least 2 points");
    if (spec.length_scale <= 0.0 || spec.sigma <= 0.0)
        throw std::invalid_argument("gp: length_scale and sigma must be positive");

    std::vector<double> xs(static_cast<size_t>(n_points));
    for (int i = 0; i < n_points; ++i) xs[static_cast<size_t>(i)] = i * dx;
    std::vector<double> ys(xs.size(), 0.0);

    GpSampler g;
    g.n_ = n_points;
    if (!spec.condition_dirichlet) {
        g.chol_ = chol_with_jitter(se_covariance(xs, ys, spec), spec.jitter);
        return g;
    }

    // Posterior over interior points given u = 0 at both endpoints:
    // K_post = K_AA - K_AB K_BB^{-1} K_BA (posterior mean is 0).
    if (n_points < 3) throw std::invalid_argument("gp: conditioning needs interior points");
    const Eigen::MatrixXd k = se_covariance(xs, ys, spec);
    const int m = n_points - 2;
    Eigen::MatrixXd k_aa(m, m), k_ab(m, 2), k_bb(2, 2);
    const int bidx[2] = {0, n_points - 1};
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < m; ++j) k_aa(i, j) = k(i + 1, j + 1);
        for (int j = 0; j < 2; ++j) k_ab(i, j) = k(i + 1, bidx[j]);
    }
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) k_bb(i, j) = k(bidx[i], bidx[j]);
    k_bb.diagonal().array() += spec.jitter;
    const Eigen::MatrixXd post = k_aa - k_ab * k_bb.llt().solve(k_ab.transpose());

    g.zero_endpoints_ = true;
    g.chol_ = chol_with_jitter(post, spec.jitter);
    return g;
}

GpSampler GpSampler::grid2d(const GpSpec& spec, int h, int w, double dx) {
    if (h < 2 || w < 2) throw std::invalid_argument("gp: grid too small");
    if (spec.condition_dirichlet)
        throw std::invalid_argument("gp: 2-D sampler is prior-only");
    std::vector<double> xs, ys;
    xs.reserve(static_cast<size_t>(h) * w);
    ys.reserve(static_cast<size_t>(h) * w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            xs.push_back(x * dx);
            ys.push_back(y * dx);
        }
    GpSampler g;
    g.n_ = h * w;
    g.chol_ = chol_with_jitter(se_covariance(xs, ys, spec), spec.jitter);
    return g;
}

Tensor GpSampler::sample(Rng& rng) const {
    const int m = static_cast<int>(chol_.rows());
    Eigen::VectorXd z(m);
    for (int i = 0; i < m; ++i) z(i) = rng.normal();
    const Eigen::VectorXd s = chol_ * z;

    Tensor out({n_});
    if (zero_endpoints_) {
        out.data[0] = 0.0;
        out.data[static_cast<size_t>(n_) - 1] = 0.0;
        for (int i = 0; i < m; ++i) out.data[static_cast<size_t>(i) + 1] = s(i);
    } else {
        for (int i = 0; i < m; ++i) out.data[static_cast<size_t>(i)] = s(i);
    }
    return out;
}

}  // namespace confide
