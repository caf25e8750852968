#include "confide/solver.hpp"

#include <cmath>

namespace confide {

namespace {
bool slice_ok(const double* p, int n, double threshold, int64_t& bad) {
    for (int i = 0; i < n; ++i) {
        if (!std::isfinite(p[i]) || std::abs(p[i]) > threshold) {
            bad = i;
            return false;
        }
    }
    return true;
}

Signal truncate(const Signal& full, int n_slices) {
    Signal out;
    out.grid = full.grid;
    const int space = full.grid.space_size();
    for (const Tensor& f : full.fields) {
        Tensor t({n_slices > 0 ? n_slices : 1, space});
        if (n_slices > 0)
            std::copy_n(f.ptr(), static_cast<size_t>(n_slices) * space, t.ptr());
        out.fields.push_back(std::move(t));
    }
    return out;
}
}  // namespace

Signal solve_explicit(const CoefficientEstimate& est, const GridSpec& grid,
                      const std::vector<Tensor>& init, int n_steps) {
    est.validate();
    grid.validate();
    const FamilyInfo& info = family_info(est.family);
    if (info.dims != grid.dims || info.fields != grid.fields)
        throw std::invalid_argument("solve_explicit: family/grid mismatch");
    if (static_cast<int>(init.size()) != grid.fields)
        throw std::invalid_argument("solve_explicit: init arity mismatch");
    if (n_steps < 0) throw std::invalid_argument("solve_explicit: negative step count");
    const int space = grid.space_size();
    for (const Tensor& f : init) {
        if (f.size() != space)
            throw std::invalid_argument("solve_explicit: init slice size mismatch");
        if (!f.all_finite()) throw std::invalid_argument("solve_explicit: non-finite init");
    }

    Signal out = Signal::zeros(grid, n_steps + 1);
    for (int f = 0; f < grid.fields; ++f)
        std::copy_n(init[static_cast<size_t>(f)].ptr(), space, out.slice(f, 0));

    std::vector<Tensor> cur;
    for (int f = 0; f < grid.fields; ++f) cur.push_back(init[static_cast<size_t>(f)]);

    const double dt = grid.dt;
    for (int j = 0; j < n_steps; ++j) {
        std::vector<Tensor> dudt = rhs_eval(est, grid, cur);
        bool bad = false;
        for (int f = 0; f < grid.fields && !bad; ++f) {
            double* next = out.slice(f, j + 1);
            const double* now = cur[static_cast<size_t>(f)].ptr();
            const double* d = dudt[static_cast<size_t>(f)].ptr();
            if (info.dirichlet) {
                next[0] = 0.0;
                next[space - 1] = 0.0;
                for (int i = 1; i + 1 < space; ++i) next[i] = now[i] + dt * d[i];
            } else {
                for (int i = 0; i < space; ++i) next[i] = now[i] + dt * d[i];
            }
            int64_t bad_idx = -1;
            if (!slice_ok(next, space, info.blowup_threshold, bad_idx)) bad = true;
        }
        if (bad) throw UnstableError(j + 1, truncate(out, j + 1));
        for (int f = 0; f < grid.fields; ++f)
            std::copy_n(out.slice(f, j + 1), space, cur[static_cast<size_t>(f)].ptr());
    }
    return out;
}

StabilityReport check_stability(const Signal& s, FamilyId family) {
    const double threshold = family_info(family).blowup_threshold;
    const int space = s.grid.space_size();
    StabilityReport rep;
    for (int j = 0; j < s.n_slices(); ++j) {
        for (size_t f = 0; f < s.fields.size(); ++f) {
            int64_t bad = -1;
            if (!slice_ok(s.slice(static_cast<int>(f), j), space, threshold, bad)) {
                rep.ok = false;
                rep.slice = j;
                rep.point = static_cast<int64_t>(f) * space + bad;
                return rep;
            }
        }
    }
    return rep;
}

}  // namespace confide
