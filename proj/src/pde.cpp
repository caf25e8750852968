#include "confide/pde.hpp"

#include <cmath>
#include <stdexcept>

namespace confide {

std::string family_name(FamilyId id) {
    switch (id) {
        case FamilyId::ConstantCoeff: return "constant";
        case FamilyId::Burgers: return "burgers";
        case FamilyId::Fn2d: return "fn2d";
    }
    throw std::invalid_argument("family_name: bad id");
}

FamilyId family_from_name(const std::string& name) {
    if (name == "constant") return FamilyId::ConstantCoeff;
    if (name == "burgers") return FamilyId::Burgers;
    if (name == "fn2d") return FamilyId::Fn2d;
    throw std::invalid_argument("unknown family: " + name +
                                " (expected constant|burgers|fn2d)");
}

const FamilyInfo& family_info(FamilyId id) {
    static const FamilyInfo constant{FamilyId::ConstantCoeff, 1, 1, 3, false, 0,
                                     {"a", "b", "c"},         1e3, true};
    static const FamilyInfo burgers{FamilyId::Burgers, 1, 1, 1, true, 1,
                                    {"a"},             1e3, true};
    static const FamilyInfo fn2d{FamilyId::Fn2d, 2, 2, 1, true, 2, {"k"}, 1e2, false};
    switch (id) {
        case FamilyId::ConstantCoeff: return constant;
        case FamilyId::Burgers: return burgers;
        case FamilyId::Fn2d: return fn2d;
    }
    throw std::invalid_argument("family_info: bad id");
}

void GridSpec::validate() const {
    if (dims != 1 && dims != 2) throw std::invalid_argument("GridSpec: dims must be 1 or 2");
    if (nx <= 0 || dx <= 0.0 || dt <= 0.0 || nt <= 0)
        throw std::invalid_argument("GridSpec: nx, dx, dt, nt must be positive");
    if (dims == 2 && ny <= 0) throw std::invalid_argument("GridSpec: 2-D grid needs ny");
    if (fields != 1 && fields != 2) throw std::invalid_argument("GridSpec: fields must be 1 or 2");
    if (dims == 2 && !periodic)
        throw std::invalid_argument("GridSpec: 2-D grids are periodic only");
}

bool GridSpec::same_as(const GridSpec& o) const {
    return dims == o.dims && nx == o.nx && ny == o.ny && dx == o.dx && dt == o.dt &&
           nt == o.nt && periodic == o.periodic && fields == o.fields;
}

GridSpec GridSpec::line_default() {
    GridSpec g;
    g.dims = 1;
    g.nx = 40;       // x in [0,20], dx 0.5 -> 41 points
    g.dx = 0.5;
    g.dt = 0.05;
    g.nt = 100;      // t in [0,5]
    g.periodic = false;
    g.fields = 1;
    return g;
}

GridSpec GridSpec::fn2d_default() {
    GridSpec g;
    g.dims = 2;
    g.nx = 32;       // [-0.16,0.16)^2 periodic, dx 0.01
    g.ny = 32;
    g.dx = 0.01;
    // dt 2e-3 keeps the v-field diffusion CFL at 5e-3*dt/dx^2 = 0.1, inside the
    // 2-D FTCS bound of 1/4; dt 0.01 would put it at 0.5 and blow up.
    g.dt = 2e-3;
    g.nt = 100;
    g.periodic = true;
    g.fields = 2;
    return g;
}

void Signal::validate() const {
    grid.validate();
    if (static_cast<int>(fields.size()) != grid.fields)
        throw std::invalid_argument("Signal: field count mismatch");
    const int ns = n_slices();
    for (const Tensor& f : fields) {
        if (f.rank() != 2 || f.dim(0) != ns || f.dim(1) != grid.space_size())
            throw std::invalid_argument("Signal: field shape mismatch, got " + f.shape_str());
        if (!f.all_finite()) throw std::invalid_argument("Signal: non-finite entries");
    }
}

Signal Signal::zeros(const GridSpec& grid, int n_slices) {
    grid.validate();
    if (n_slices <= 0) throw std::invalid_argument("Signal: n_slices must be positive");
    Signal s;
    s.grid = grid;
    for (int f = 0; f < grid.fields; ++f)
        s.fields.emplace_back(std::vector<int>{n_slices, grid.space_size()});
    return s;
}

Patch Patch::from_signal(const Signal& s, int offset, int n_ctx) {
    if (n_ctx < 3) throw std::invalid_argument("Patch: n_ctx must be at least 3");
    if (offset < 0 || offset + n_ctx > s.n_slices())
        throw std::invalid_argument("Patch: window [" + std::to_string(offset) + "," +
                                    std::to_string(offset + n_ctx) + ") outside signal with " +
                                    std::to_string(s.n_slices()) + " slices");
    Patch p;
    p.grid = s.grid;
    p.offset = offset;
    p.n_ctx = n_ctx;
    const int space = s.grid.space_size();
    for (const Tensor& f : s.fields) {
        Tensor w({n_ctx, space});
        std::copy_n(f.ptr() + static_cast<size_t>(offset) * space,
                    static_cast<size_t>(n_ctx) * space, w.ptr());
        p.fields.push_back(std::move(w));
    }
    return p;
}

void CoefficientEstimate::validate() const {
    const FamilyInfo& info = family_info(family);
    if (static_cast<int>(scalars.size()) != info.n_scalars)
        throw std::invalid_argument("CoefficientEstimate: expected " +
                                    std::to_string(info.n_scalars) + " scalars, got " +
                                    std::to_string(scalars.size()));
    for (double s : scalars)
        if (!std::isfinite(s))
            throw std::invalid_argument("CoefficientEstimate: non-finite scalar");
    if (family == FamilyId::Burgers && !b_head)
        throw std::invalid_argument("CoefficientEstimate: Burgers needs a b-head");
    if (family == FamilyId::Fn2d && !rv_head)
        throw std::invalid_argument("CoefficientEstimate: Fn2d needs an R_v head");
}

CoefficientEstimate CoefficientEstimate::from_truth(const TrueCoeffs& t) {
    CoefficientEstimate e;
    e.family = t.family;
    e.scalars = t.scalars;
    if (t.family == FamilyId::Burgers) e.b_head = [](double u) { return -u; };
    if (t.family == FamilyId::Fn2d) e.rv_head = [](double u, double v) { return u - v; };
    e.validate();
    return e;
}

namespace {
void check_patch_1d(const Patch& p) {
    if (p.grid.dims != 1 || p.fields.size() != 1)
        throw std::invalid_argument("derivatives: expected a 1-D single-field patch");
    if (p.n_ctx < 3) throw std::invalid_argument("derivatives: patch too small");
    if (p.grid.points_x() < 3) throw std::invalid_argument("derivatives: too few grid points");
}
}  // namespace

DerivStack1d estimate_derivatives_1d(const Patch& p) {
    check_patch_1d(p);
    const int P = p.grid.points_x();
    const int rows = p.n_ctx - 1;
    const int interior = P - 2;
    const double inv_dt = 1.0 / p.grid.dt;
    const double inv_2dx = 1.0 / (2.0 * p.grid.dx);
    const double inv_dx2 = 1.0 / (p.grid.dx * p.grid.dx);

    DerivStack1d d;
    d.ut = Tensor({rows, interior});
    d.ux = Tensor({rows, interior});
    d.uxx = Tensor({rows, interior});
    d.state = Tensor({rows, interior});
    const Tensor& u = p.fields[0];
    for (int r = 0; r < rows; ++r) {
        const double* now = u.ptr() + static_cast<size_t>(r) * P;
        const double* next = now + P;
        double* ut = d.ut.ptr() + static_cast<size_t>(r) * interior;
        double* ux = d.ux.ptr() + static_cast<size_t>(r) * interior;
        double* uxx = d.uxx.ptr() + static_cast<size_t>(r) * interior;
        double* st = d.state.ptr() + static_cast<size_t>(r) * interior;
        for (int i = 1; i + 1 < P; ++i) {
            ut[i - 1] = (next[i] - now[i]) * inv_dt;
            ux[i - 1] = (now[i + 1] - now[i - 1]) * inv_2dx;
            uxx[i - 1] = (now[i + 1] - 2.0 * now[i] + now[i - 1]) * inv_dx2;
            st[i - 1] = now[i];
        }
    }
    return d;
}

DerivStack2d estimate_derivatives_2d(const Patch& p) {
    if (p.grid.dims != 2 || p.fields.size() != 2)
        throw std::invalid_argument("derivatives: expected a 2-D two-field patch");
    if (p.n_ctx < 3) throw std::invalid_argument("derivatives: patch too small");
    const int H = p.grid.points_y(), W = p.grid.points_x();
    const int space = H * W;
    const int rows = p.n_ctx - 1;
    const double inv_dt = 1.0 / p.grid.dt;
    const double inv_dx2 = 1.0 / (p.grid.dx * p.grid.dx);

    DerivStack2d d;
    d.ut = Tensor({rows, space});
    d.vt = Tensor({rows, space});
    d.lap_u = Tensor({rows, space});
    d.lap_v = Tensor({rows, space});
    d.u = Tensor({rows, space});
    d.v = Tensor({rows, space});

    auto fill_field = [&](const Tensor& f, Tensor& ft, Tensor& lap, Tensor& st) {
        for (int r = 0; r < rows; ++r) {
            const double* now = f.ptr() + static_cast<size_t>(r) * space;
            const double* next = now + space;
            double* t = ft.ptr() + static_cast<size_t>(r) * space;
            double* l = lap.ptr() + static_cast<size_t>(r) * space;
            double* s = st.ptr() + static_cast<size_t>(r) * space;
            for (int y = 0; y < H; ++y) {
                const int yu = (y + 1) % H, yd = (y + H - 1) % H;
                for (int x = 0; x < W; ++x) {
                    const int xr = (x + 1) % W, xl = (x + W - 1) % W;
                    const int idx = y * W + x;
                    t[idx] = (next[idx] - now[idx]) * inv_dt;
                    l[idx] = (now[y * W + xr] + now[y * W + xl] + now[yu * W + x] +
                              now[yd * W + x] - 4.0 * now[idx]) *
                             inv_dx2;
                    s[idx] = now[idx];
                }
            }
        }
    };
    fill_field(p.fields[0], d.ut, d.lap_u, d.u);
    fill_field(p.fields[1], d.vt, d.lap_v, d.v);
    return d;
}

namespace {
[[noreturn]] void throw_nonfinite(const char* what, int row, int col) {
    throw std::runtime_error(std::string("residual: non-finite ") + what + " at row " +
                             std::to_string(row) + ", point " + std::to_string(col));
}
}  // namespace

double residual_value(const CoefficientEstimate& est, const Patch& p) {
    est.validate();
    const FamilyInfo& info = family_info(est.family);
    if (info.dims != p.grid.dims || info.fields != static_cast<int>(p.fields.size()))
        throw std::invalid_argument("residual: family/patch mismatch");

    if (est.family == FamilyId::ConstantCoeff || est.family == FamilyId::Burgers) {
        const DerivStack1d d = estimate_derivatives_1d(p);
        const int rows = d.ut.dim(0), cols = d.ut.dim(1);
        double acc = 0.0;
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < cols; ++c) {
                const size_t k = static_cast<size_t>(r) * cols + c;
                double rhs;
                if (est.family == FamilyId::ConstantCoeff) {
                    rhs = est.scalars[0] * d.uxx.data[k] + est.scalars[1] * d.ux.data[k] +
                          est.scalars[2];
                } else {
                    rhs = est.scalars[0] * d.uxx.data[k] +
                          est.b_head(d.state.data[k]) * d.ux.data[k];
                }
                const double res = d.ut.data[k] - rhs;
                if (!std::isfinite(res)) throw_nonfinite("residual", r, c);
                acc += res * res;
            }
        return acc / (static_cast<double>(rows) * cols);
    }

    const DerivStack2d d = estimate_derivatives_2d(p);
    const int rows = d.ut.dim(0), cols = d.ut.dim(1);
    const double k_hat = est.scalars[0];
    double acc = 0.0;
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) {
            const size_t i = static_cast<size_t>(r) * cols + c;
            const double u = d.u.data[i], v = d.v.data[i];
            const double rhs_u = kFn2dDiffU * d.lap_u.data[i] + u - u * u * u - k_hat - v;
            const double rhs_v = kFn2dDiffV * d.lap_v.data[i] + est.rv_head(u, v);
            const double res_u = d.ut.data[i] - rhs_u;
            const double res_v = d.vt.data[i] - rhs_v;
            if (!std::isfinite(res_u) || !std::isfinite(res_v)) throw_nonfinite("residual", r, c);
            acc += res_u * res_u + res_v * res_v;
        }
    return acc / (2.0 * static_cast<double>(rows) * cols);
}

std::vector<Tensor> rhs_eval(const CoefficientEstimate& est, const GridSpec& grid,
                             const std::vector<Tensor>& state) {
    est.validate();
    const FamilyInfo& info = family_info(est.family);
    if (static_cast<int>(state.size()) != info.fields)
        throw std::invalid_argument("rhs_eval: state arity mismatch");
    for (const Tensor& f : state)
        if (f.size() != grid.space_size())
            throw std::invalid_argument("rhs_eval: slice size mismatch, got " + f.shape_str());

    if (info.dims == 1) {
        const int P = grid.points_x();
        const double inv_2dx = 1.0 / (2.0 * grid.dx);
        const double inv_dx2 = 1.0 / (grid.dx * grid.dx);
        const double* u = state[0].ptr();
        Tensor out({P});
        for (int i = 1; i + 1 < P; ++i) {
            const double ux = (u[i + 1] - u[i - 1]) * inv_2dx;
            const double uxx = (u[i + 1] - 2.0 * u[i] + u[i - 1]) * inv_dx2;
            if (est.family == FamilyId::ConstantCoeff)
                out.data[static_cast<size_t>(i)] =
                    est.scalars[0] * uxx + est.scalars[1] * ux + est.scalars[2];
            else
                out.data[static_cast<size_t>(i)] =
                    est.scalars[0] * uxx + est.b_head(u[i]) * ux;
        }
        std::vector<Tensor> res;
        res.push_back(std::move(out));
        return res;
    }

    const int H = grid.points_y(), W = grid.points_x();
    const double inv_dx2 = 1.0 / (grid.dx * grid.dx);
    const double k_hat = est.scalars[0];
    const double* u = state[0].ptr();
    const double* v = state[1].ptr();
    Tensor du({H * W}), dv({H * W});
    for (int y = 0; y < H; ++y) {
        const int yu = (y + 1) % H, yd = (y + H - 1) % H;
        for (int x = 0; x < W; ++x) {
            const int xr = (x + 1) % W, xl = (x + W - 1) % W;
            const size_t idx = static_cast<size_t>(y) * W + x;
            const double lap_u = (u[y * W + xr] + u[y * W + xl] + u[yu * W + x] +
                                  u[yd * W + x] - 4.0 * u[idx]) *
                                 inv_dx2;
            const double lap_v = (v[y * W + xr] + v[y * W + xl] + v[yu * W + x] +
                                  v[yd * W + x] - 4.0 * v[idx]) *
                                 inv_dx2;
            du.data[idx] = kFn2dDiffU * lap_u + u[idx] - u[idx] * u[idx] * u[idx] - k_hat - v[idx];
            dv.data[idx] = kFn2dDiffV * lap_v + est.rv_head(u[idx], v[idx]);
        }
    }
    std::vector<Tensor> res;
    res.push_back(std::move(du));
    res.push_back(std::move(dv));
    return res;
}

}  // namespace confide
