#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "confide/tensor.hpp"

namespace confide {

enum class FamilyId { ConstantCoeff, Burgers, Fn2d };

std::string family_name(FamilyId id);
FamilyId family_from_name(const std::string& name);

// FN2D diffusion coefficients are fixed and known.
inline constexpr double kFn2dDiffU = 1e-3;
inline constexpr double kFn2dDiffV = 5e-3;

struct FamilyInfo {
    FamilyId id;
    int dims;          // spatial dimensions
    int fields;        // state arity
    int n_scalars;     // learned scalar coefficients
    bool has_head;     // pointwise coefficient-function head
    int head_arity;    // state inputs to the head
    std::vector<std::string> scalar_names;
    double blowup_threshold;
    bool dirichlet;    // zero endpoints; otherwise periodic
};

const FamilyInfo& family_info(FamilyId id);

struct GridSpec {
    int dims = 1;
    int nx = 40;          // intervals along x; Dirichlet grids store nx+1 points
    int ny = 0;           // FN2D: points per axis (periodic, no duplicated endpoint)
    double dx = 0.5;
    double dt = 0.05;
    int nt = 100;         // time steps; nt+1 slices stored
    bool periodic = false;
    int fields = 1;

    int points_x() const { return periodic ? nx : nx + 1; }
    int points_y() const { return periodic ? ny : ny + 1; }
    int space_size() const { return dims == 1 ? points_x() : points_x() * points_y(); }
    int slice_size() const { return fields * space_size(); }
    void validate() const;
    bool same_as(const GridSpec& o) const;

    static GridSpec line_default();  // ConstantCoeff and Burgers
    static GridSpec fn2d_default();
};

// Dense spatio-temporal signal; one Tensor per state field, shaped
// [n_slices, space_size].
struct Signal {
    GridSpec grid;
    std::vector<Tensor> fields;

    int n_slices() const { return fields.empty() ? 0 : fields[0].dim(0); }
    double* slice(int f, int j) {
        return fields[static_cast<size_t>(f)].ptr() +
               static_cast<size_t>(j) * grid.space_size();
    }
    const double* slice(int f, int j) const {
        return fields[static_cast<size_t>(f)].ptr() +
               static_cast<size_t>(j) * grid.space_size();
    }
    void validate() const;

    static Signal zeros(const GridSpec& grid, int n_slices);
};

// Temporal window of a signal: n_ctx consecutive slices starting at `offset`.
struct Patch {
    GridSpec grid;
    int offset = 0;
    int n_ctx = 0;
    std::vector<Tensor> fields;  // each [n_ctx, space_size]

    static Patch from_signal(const Signal& s, int offset, int n_ctx);
};

// Ground-truth coefficients as sampled by the generator. Scalar layout per
// family: ConstantCoeff (a,b,c); Burgers (a) with b(u) = -u implied;
// Fn2d (k) with R_v(u,v) = u - v implied.
struct TrueCoeffs {
    FamilyId family = FamilyId::ConstantCoeff;
    std::vector<double> scalars;
};

// Estimated coefficients: scalars plus pointwise heads where the family has a
// coefficient function. Heads map state values, so rollout at unseen states is
// defined.
struct CoefficientEstimate {
    FamilyId family = FamilyId::ConstantCoeff;
    std::vector<double> scalars;
    std::function<double(double)> b_head;            // Burgers: u -> b(u)
    std::function<double(double, double)> rv_head;   // Fn2d: (u,v) -> R_v

    void validate() const;
    static CoefficientEstimate from_truth(const TrueCoeffs& t);
};

// Forward-time central-space derivative estimates over a patch. Rows cover
// time indices 0..n_ctx-2; columns are residual points (interior for
// Dirichlet grids, the whole grid under periodic wrap).
struct DerivStack1d {
    Tensor ut, ux, uxx, state;  // [n_ctx-1, points_x-2]
};

struct DerivStack2d {
    Tensor ut, vt, lap_u, lap_v, u, v;  // [n_ctx-1, H*W]
};

DerivStack1d estimate_derivatives_1d(const Patch& p);
DerivStack2d estimate_derivatives_2d(const Patch& p);

// Mean over residual points of (u_t - RHS)^2; FN2D averages over both
// equations. Throws on non-finite contributions with the offending index.
double residual_value(const CoefficientEstimate& est, const Patch& p);

// Time derivative of one state slice under the family RHS. Dirichlet grids
// return zero at the endpoints so the solver holds them fixed.
std::vector<Tensor> rhs_eval(const CoefficientEstimate& est, const GridSpec& grid,
                             const std::vector<Tensor>& state);

}  // namespace confide
