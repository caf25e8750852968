#include "confide/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace confide::opt {

Adam::Adam(std::vector<Tensor*> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const Tensor* p : params_) {
        if (p == nullptr) throw std::invalid_argument("Adam: null parameter");
        m_.emplace_back(p->shape);
        v_.emplace_back(p->shape);
    }
}

bool Adam::step(const std::vector<const Tensor*>& grads) {
    if (grads.size() != params_.size())
        throw std::invalid_argument("Adam: gradient count mismatch");
    for (size_t i = 0; i < grads.size(); ++i) {
        if (!grads[i]->same_shape(*params_[i]))
            throw std::invalid_argument("Adam: gradient shape mismatch");
        if (!grads[i]->all_finite()) return false;
    }

    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
        Tensor& p = *params_[i];
        const Tensor& g = *grads[i];
        Tensor& m = m_[i];
        Tensor& v = v_[i];
        for (size_t j = 0; j < p.data.size(); ++j) {
            m.data[j] = cfg_.beta1 * m.data[j] + (1.0 - cfg_.beta1) * g.data[j];
            v.data[j] = cfg_.beta2 * v.data[j] + (1.0 - cfg_.beta2) * g.data[j] * g.data[j];
            const double mhat = m.data[j] / bc1;
            const double vhat = v.data[j] / bc2;
            p.data[j] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
    }
    return true;
}

}  // namespace confide::opt
