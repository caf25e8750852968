#pragma once

#include <cstdint>
#include <vector>

#include "confide/tensor.hpp"

namespace confide::opt {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Bias-corrected Adam over a fixed set of parameter tensors. Gradients are
// passed per step in the same order. A step with any non-finite gradient is
// rejected: parameters and moments stay untouched and step() returns false so
// the caller can count skipped batches.
class Adam {
  public:
    Adam(std::vector<Tensor*> params, AdamConfig cfg);

    bool step(const std::vector<const Tensor*>& grads);
    int64_t steps_taken() const { return t_; }
    const AdamConfig& config() const { return cfg_; }
    void set_lr(double lr) { cfg_.lr = lr; }  // for schedules; moments are kept

  private:
    std::vector<Tensor*> params_;
    std::vector<Tensor> m_, v_;
    AdamConfig cfg_;
    int64_t t_ = 0;
};

}  // namespace confide::opt
