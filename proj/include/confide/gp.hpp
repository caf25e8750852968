#pragma once

#include <Eigen/Dense>

#include "confide/pde.hpp"
#include "confide/rng.hpp"
#include "confide/tensor.hpp"

namespace confide {

// Squared-exponential kernel k(x,x') = sigma^2 * exp(-|x-x'|^2 / (2 l^2)).
struct GpSpec {
    double length_scale = 3.0;
    double sigma = 0.5;
    bool condition_dirichlet = true;  // 1-D only: condition on u(0)=u(L)=0
    double jitter = 1e-10;            // escalated x100 up to 1e-6 on failure
};

// Draws grid-valued samples. The covariance factor is computed once at
// construction and reused for every draw.
class GpSampler {
  public:
    // 1-D points x_i = i*dx, i = 0..n_points-1. If conditioned, the posterior
    // given u=0 at both endpoints is sampled and the endpoints are exactly 0.
    static GpSampler line(const GpSpec& spec, int n_points, double dx);
    // 2-D prior on an h x w grid with spacing dx (plain Euclidean distance).
    static GpSampler grid2d(const GpSpec& spec, int h, int w, double dx);

    // One sample; consumes n normals from rng in fixed order.
    Tensor sample(Rng& rng) const;

    int size() const { return n_; }

  private:
    int n_ = 0;
    bool zero_endpoints_ = false;
    Eigen::MatrixXd chol_;  // lower factor over the sampled (interior) points
};

}  // namespace confide
