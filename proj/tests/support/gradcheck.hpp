#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "confide/graph.hpp"

namespace confide::testing {

// Builds a scalar loss from graph vars wrapping `leaves` (in order). Must be a
// pure function of the leaf values so we can rebuild it for finite differences.
using LossBuilder = std::function<ad::Var(ad::Graph&, const std::vector<ad::Var>&)>;

// Central-difference check of every element of every leaf against the reverse
// pass. Returns the worst relative error, with denominator floored so that
// near-zero gradients are compared absolutely at 1e-4 scale.
inline double gradcheck_max_rel_err(std::vector<Tensor>& leaves, const LossBuilder& build,
                                    double h = 1e-5) {
    ad::Graph g;
    std::vector<ad::Var> vars;
    vars.reserve(leaves.size());
    for (Tensor& t : leaves) vars.push_back(g.param(t));
    ad::Var loss = build(g, vars);
    g.backward(loss);
    std::vector<Tensor> grads;
    grads.reserve(vars.size());
    for (ad::Var v : vars) grads.push_back(g.grad(v));

    auto eval = [&]() {
        ad::Graph g2;
        std::vector<ad::Var> vs;
        vs.reserve(leaves.size());
        for (Tensor& t : leaves) vs.push_back(g2.param(t));
        return g2.value(build(g2, vs)).data[0];
    };

    double worst = 0.0;
    for (size_t li = 0; li < leaves.size(); ++li) {
        for (size_t i = 0; i < leaves[li].data.size(); ++i) {
            const double saved = leaves[li].data[i];
            leaves[li].data[i] = saved + h;
            const double lp = eval();
            leaves[li].data[i] = saved - h;
            const double lm = eval();
            leaves[li].data[i] = saved;
            const double fd = (lp - lm) / (2.0 * h);
            const double adv = grads[li].data[i];
            const double denom = std::max({std::abs(fd), std::abs(adv), 1e-4});
            worst = std::max(worst, std::abs(fd - adv) / denom);
        }
    }
    return worst;
}

}  // namespace confide::testing
