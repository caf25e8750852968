#include "confide/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <memory>
#include <stdexcept>

#include "confide/adam.hpp"
#include "confide/checkpoint.hpp"
#include "confide/solver.hpp"

namespace confide::model {

namespace {

constexpr uint64_t kInitLane = 0x1417;
constexpr uint64_t kEpochLane = 0xA11C;

void relu_inplace(Tensor& t) {
    for (double& v : t.data) v = std::max(v, 0.0);
}

std::vector<int> stride_list(int limit, int stride) {
    std::vector<int> out;
    for (int v = 0; v < limit; v += stride) out.push_back(v);
    return out;
}

// Shared state for coefficient heads returned by estimate(): the latent half
// of the first layer is folded in once, copies of the closure stay cheap.
struct BakedHead {
    std::vector<double> lat_part;  // [h], latent*w_lat + b1
    Tensor w_state;                // [arity, h]
    nn::MlpParams rest;
};

double eval_baked(const BakedHead& h, const double* state, int arity) {
    const int width = static_cast<int>(h.lat_part.size());
    Tensor row({1, width});
    for (int c = 0; c < width; ++c) {
        double v = h.lat_part[static_cast<size_t>(c)];
        for (int a = 0; a < arity; ++a)
            v += state[a] * h.w_state.data[static_cast<size_t>(a) * width + c];
        row.data[static_cast<size_t>(c)] = std::max(v, 0.0);
    }
    return h.rest.forward_value(row).data[0];
}

}  // namespace

std::string variant_name(Variant v) {
    switch (v) {
        case Variant::Confide: return "confide";
        case Variant::AeIc: return "ae-ic";
        case Variant::NoAe: return "no-ae";
        case Variant::Confide0: return "confide0";
    }
    throw std::invalid_argument("variant_name: bad value");
}

Variant variant_from_name(const std::string& s) {
    if (s == "confide") return Variant::Confide;
    if (s == "ae-ic") return Variant::AeIc;
    if (s == "no-ae") return Variant::NoAe;
    if (s == "confide0") return Variant::Confide0;
    throw std::invalid_argument("unknown variant: " + s);
}

TrainConfig TrainConfig::desk(FamilyId family) {
    TrainConfig c;
    c.enc_hidden.assign(5, 128);  // half the paper's 6-layer / 256-unit nets
    c.dec_hidden.assign(5, 128);
    c.est_hidden.assign(5, 512);  // half the paper's 5x1024 estimator
    switch (family) {
        case FamilyId::ConstantCoeff:
            break;
        case FamilyId::Burgers:
            c.residual_row_stride = 4;
            break;
        case FamilyId::Fn2d:
            c.d_z = 128;
            c.conv_c1 = 8;
            c.conv_c2 = 16;
            c.dense_hidden = 256;
            c.residual_row_stride = 4;
            c.residual_col_stride = 4;
            c.max_epochs = 60;
            break;
    }
    return c;
}

TrainConfig TrainConfig::paper(FamilyId family) {
    TrainConfig c = desk(family);
    c.enc_hidden.assign(5, 256);
    c.dec_hidden.assign(5, 256);
    c.est_hidden.assign(5, 1024);
    c.residual_row_stride = 1;
    c.residual_col_stride = 1;
    c.max_epochs = family == FamilyId::Fn2d ? 300 : 500;
    if (family == FamilyId::Fn2d) {
        c.conv_c1 = 16;
        c.conv_c2 = 32;
        c.dense_hidden = 512;
    }
    return c;
}

nlohmann::json TrainConfig::to_json() const {
    return {{"variant", variant_name(variant)},
            {"alpha", alpha},
            {"rho", rho},
            {"max_epochs", max_epochs},
            {"patience", patience},
            {"batch_size", batch_size},
            {"lr", lr},
            {"lr_decay", lr_decay},
            {"d_z", d_z},
            {"enc_hidden", enc_hidden},
            {"dec_hidden", dec_hidden},
            {"est_hidden", est_hidden},
            {"head_hidden", head_hidden},
            {"conv_c1", conv_c1},
            {"conv_c2", conv_c2},
            {"dense_hidden", dense_hidden},
            {"residual_row_stride", residual_row_stride},
            {"residual_col_stride", residual_col_stride},
            {"random_offsets", random_offsets},
            {"max_skip_frac", max_skip_frac},
            {"seed", seed}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.variant = variant_from_name(j.at("variant").get<std::string>());
    c.alpha = j.at("alpha").get<double>();
    c.rho = j.at("rho").get<double>();
    c.max_epochs = j.at("max_epochs").get<int>();
    c.patience = j.at("patience").get<int>();
    c.batch_size = j.at("batch_size").get<int>();
    c.lr = j.at("lr").get<double>();
    c.lr_decay = j.at("lr_decay").get<double>();
    c.d_z = j.at("d_z").get<int>();
    c.enc_hidden = j.at("enc_hidden").get<std::vector<int>>();
    c.dec_hidden = j.at("dec_hidden").get<std::vector<int>>();
    c.est_hidden = j.at("est_hidden").get<std::vector<int>>();
    c.head_hidden = j.at("head_hidden").get<std::vector<int>>();
    c.conv_c1 = j.at("conv_c1").get<int>();
    c.conv_c2 = j.at("conv_c2").get<int>();
    c.dense_hidden = j.at("dense_hidden").get<int>();
    c.residual_row_stride = j.at("residual_row_stride").get<int>();
    c.residual_col_stride = j.at("residual_col_stride").get<int>();
    c.random_offsets = j.at("random_offsets").get<bool>();
    c.max_skip_frac = j.at("max_skip_frac").get<double>();
    c.seed = j.at("seed").get<uint64_t>();
    return c;
}

void TrainConfig::validate(FamilyId family) const {
    if (alpha < 0.0 || alpha > 1.0) throw std::invalid_argument("config: alpha outside [0,1]");
    if (variant == Variant::NoAe && alpha != 0.0)
        throw std::invalid_argument("config: no-ae requires alpha = 0");
    if (rho <= 0.0 || rho > 1.0) throw std::invalid_argument("config: rho outside (0,1]");
    if (max_epochs < 1 || patience < 1 || batch_size < 1)
        throw std::invalid_argument("config: counts must be positive");
    if (lr <= 0.0) throw std::invalid_argument("config: lr must be positive");
    if (lr_decay <= 0.0 || lr_decay > 1.0)
        throw std::invalid_argument("config: lr_decay outside (0,1]");
    if (d_z < 1) throw std::invalid_argument("config: d_z must be positive");
    if (enc_hidden.empty() || dec_hidden.empty() || est_hidden.empty() || head_hidden.empty())
        throw std::invalid_argument("config: hidden widths must be non-empty");
    if (residual_row_stride < 1 || residual_col_stride < 1)
        throw std::invalid_argument("config: strides must be positive");
    if (family == FamilyId::Fn2d && (conv_c1 < 1 || conv_c2 < 1 || dense_hidden < 1))
        throw std::invalid_argument("config: conv widths must be positive");
}

int context_slices(const GridSpec& grid, double rho) {
    const int n = static_cast<int>(std::floor(rho * grid.nt));
    if (n < 3)
        throw std::invalid_argument("context window of " + std::to_string(n) +
                                    " slices is too short (need at least 3)");
    if (n > grid.nt) throw std::invalid_argument("context window exceeds the signal");
    return n;
}

HeadParams HeadParams::init(int d_z, int arity, const std::vector<int>& hidden, Rng& rng) {
    if (hidden.empty()) throw std::invalid_argument("head: need at least one hidden width");
    HeadParams h;
    const int width = hidden[0];
    // drawn as one joint layer so the init distribution sees the true fan-in
    nn::MlpSpec first;
    first.widths = {d_z + arity, width};
    nn::MlpParams joint = nn::MlpParams::init(first, rng);
    h.w_lat = Tensor({d_z, width});
    h.w_state = Tensor({arity, width});
    std::copy_n(joint.w[0].ptr(), static_cast<size_t>(d_z) * width, h.w_lat.ptr());
    std::copy_n(joint.w[0].ptr() + static_cast<size_t>(d_z) * width,
                static_cast<size_t>(arity) * width, h.w_state.ptr());
    h.b1 = joint.b[0];

    nn::MlpSpec rest;
    rest.widths.push_back(width);
    for (size_t i = 1; i < hidden.size(); ++i) rest.widths.push_back(hidden[i]);
    rest.widths.push_back(1);
    h.rest = nn::MlpParams::init(rest, rng);
    return h;
}

// ---------------------------------------------------------------------------

struct ConfideModel::BatchData {
    int B = 0;
    Tensor x;   // mlp path [B, patch_elems]; conv path [B*n_ctx, fields, H, W]
    Tensor ic;  // [B, slice_elems]
    Tensor ut, ux, uxx;                // 1-D stacks [B, M]
    Tensor res_const_u, res_const_v;   // fn2d constant residual parts [B, M]
    Tensor states;                     // head inputs [B*M, arity]
    int M = 0;
    Tensor c0_states, c0_ut;           // confide0 rows [B*pairs, slice_elems]
    int pairs = 0;
};

struct ConfideModel::GraphVars {
    nn::MlpVars enc, dec, shead, hrest, mnet;
    ad::Var c1k, c1b, c2k, c2b, d1k, d1b, d2k, d2b;
    ad::Var h_wlat, h_wstate, h_b1;
};

ConfideModel ConfideModel::init(FamilyId family, const GridSpec& grid, const TrainConfig& cfg) {
    grid.validate();
    const FamilyInfo& info = family_info(family);
    if (grid.dims != info.dims || grid.fields != info.fields)
        throw std::invalid_argument("model: grid does not match family");

    ConfideModel m;
    m.family_ = family;
    m.grid_ = grid;
    m.cfg_ = cfg;
    if (cfg.variant == Variant::NoAe) m.cfg_.alpha = 0.0;
    m.cfg_.validate(family);
    m.n_ctx_ = context_slices(grid, cfg.rho);
    m.has_conv_ = grid.dims == 2;
    m.has_state_head_ = info.has_head && cfg.variant != Variant::Confide0;

    const int slice_elems = grid.fields * grid.space_size();
    const int patch_elems = m.n_ctx_ * slice_elems;
    const int dec_in = cfg.d_z + (cfg.variant == Variant::AeIc ? 0 : slice_elems);

    Rng rng(derive_seed(cfg.seed, kInitLane));
    auto mlp = [&rng](std::vector<int> widths) {
        nn::MlpSpec s;
        s.widths = std::move(widths);
        return nn::MlpParams::init(s, rng);
    };
    auto widths_between = [](int in, const std::vector<int>& hidden, int out) {
        std::vector<int> w{in};
        w.insert(w.end(), hidden.begin(), hidden.end());
        w.push_back(out);
        return w;
    };

    if (!m.has_conv_) {
        m.enc_mlp_ = mlp(widths_between(patch_elems, cfg.enc_hidden, cfg.d_z));
        m.dec_mlp_ = mlp(widths_between(dec_in, cfg.dec_hidden, patch_elems));
    } else {
        m.conv1_ = nn::Conv2dLayer::init(grid.fields, cfg.conv_c1, 3, 3, 2, 1, rng);
        m.conv2_ = nn::Conv2dLayer::init(cfg.conv_c1, cfg.conv_c2, 3, 3, 2, 1, rng);
        const int feat = m.n_ctx_ * m.feat_per_slice();
        m.enc_mlp_ = mlp({feat, cfg.dense_hidden, cfg.d_z});
        m.dec_mlp_ = mlp({dec_in, cfg.dense_hidden, feat});
        m.dec_deconv1_ = nn::Deconv2dLayer::init(cfg.conv_c2, cfg.conv_c1, 3, 3, 2, 1, 1, rng);
        m.dec_deconv2_ = nn::Deconv2dLayer::init(cfg.conv_c1, grid.fields, 3, 3, 2, 1, 1, rng);
    }

    if (cfg.variant == Variant::Confide0) {
        m.m_net_ = mlp(widths_between(slice_elems + cfg.d_z, cfg.dec_hidden, slice_elems));
    } else {
        m.scalar_head_ = mlp(widths_between(cfg.d_z, cfg.est_hidden, info.n_scalars));
        if (m.has_state_head_)
            m.state_head_ = HeadParams::init(cfg.d_z, info.head_arity, cfg.head_hidden, rng);
    }
    return m;
}

std::vector<std::pair<std::string, Tensor*>> ConfideModel::named_params() {
    std::vector<std::pair<std::string, Tensor*>> out;
    auto append = [&out](std::vector<std::pair<std::string, Tensor*>> xs) {
        for (auto& x : xs) out.push_back(std::move(x));
    };
    append(enc_mlp_.named_params("enc"));
    append(dec_mlp_.named_params("dec"));
    if (has_conv_) {
        out.emplace_back("conv1.k", &conv1_.k);
        out.emplace_back("conv1.b", &conv1_.b);
        out.emplace_back("conv2.k", &conv2_.k);
        out.emplace_back("conv2.b", &conv2_.b);
        out.emplace_back("dec1.k", &dec_deconv1_.k);
        out.emplace_back("dec1.b", &dec_deconv1_.b);
        out.emplace_back("dec2.k", &dec_deconv2_.k);
        out.emplace_back("dec2.b", &dec_deconv2_.b);
    }
    if (cfg_.variant != Variant::Confide0) {
        append(scalar_head_.named_params("shead"));
        if (has_state_head_) {
            out.emplace_back("head.w_lat", &state_head_.w_lat);
            out.emplace_back("head.w_state", &state_head_.w_state);
            out.emplace_back("head.b1", &state_head_.b1);
            append(state_head_.rest.named_params("head.rest"));
        }
    } else {
        append(m_net_.named_params("mnet"));
    }
    return out;
}

std::vector<std::pair<std::string, const Tensor*>> ConfideModel::named_params() const {
    auto mut = const_cast<ConfideModel*>(this)->named_params();
    std::vector<std::pair<std::string, const Tensor*>> out;
    out.reserve(mut.size());
    for (auto& [n, t] : mut) out.emplace_back(n, t);
    return out;
}

ConfideModel::GraphVars ConfideModel::register_params(ad::Graph& g) const {
    GraphVars v;
    v.enc = enc_mlp_.register_in(g);
    v.dec = dec_mlp_.register_in(g);
    if (has_conv_) {
        v.c1k = g.param(conv1_.k);
        v.c1b = g.param(conv1_.b);
        v.c2k = g.param(conv2_.k);
        v.c2b = g.param(conv2_.b);
        v.d1k = g.param(dec_deconv1_.k);
        v.d1b = g.param(dec_deconv1_.b);
        v.d2k = g.param(dec_deconv2_.k);
        v.d2b = g.param(dec_deconv2_.b);
    }
    if (cfg_.variant != Variant::Confide0) {
        v.shead = scalar_head_.register_in(g);
        if (has_state_head_) {
            v.h_wlat = g.param(state_head_.w_lat);
            v.h_wstate = g.param(state_head_.w_state);
            v.h_b1 = g.param(state_head_.b1);
            v.hrest = state_head_.rest.register_in(g);
        }
    } else {
        v.mnet = m_net_.register_in(g);
    }
    return v;
}

namespace {
void collect_mlp(ad::Graph& g, const nn::MlpVars& vs, std::vector<const Tensor*>& out) {
    for (size_t l = 0; l < vs.w.size(); ++l) {
        out.push_back(&g.grad(vs.w[l]));
        out.push_back(&g.grad(vs.b[l]));
    }
}
}  // namespace

// Must walk components in the same order as named_params().
void ConfideModel::collect_grads(ad::Graph& g, const GraphVars& v,
                                 std::vector<const Tensor*>& out) const {
    collect_mlp(g, v.enc, out);
    collect_mlp(g, v.dec, out);
    if (has_conv_) {
        out.push_back(&g.grad(v.c1k));
        out.push_back(&g.grad(v.c1b));
        out.push_back(&g.grad(v.c2k));
        out.push_back(&g.grad(v.c2b));
        out.push_back(&g.grad(v.d1k));
        out.push_back(&g.grad(v.d1b));
        out.push_back(&g.grad(v.d2k));
        out.push_back(&g.grad(v.d2b));
    }
    if (cfg_.variant != Variant::Confide0) {
        collect_mlp(g, v.shead, out);
        if (has_state_head_) {
            out.push_back(&g.grad(v.h_wlat));
            out.push_back(&g.grad(v.h_wstate));
            out.push_back(&g.grad(v.h_b1));
            collect_mlp(g, v.hrest, out);
        }
    } else {
        collect_mlp(g, v.mnet, out);
    }
}

ConfideModel::BatchData ConfideModel::assemble(const data::Dataset& ds,
                                               const std::vector<int>& ids,
                                               const std::vector<int>& offsets) const {
    if (ids.size() != offsets.size()) throw std::invalid_argument("assemble: ids/offsets mismatch");
    const int B = static_cast<int>(ids.size());
    const int space = grid_.space_size();
    const int slice_elems = grid_.fields * space;
    const int patch_elems = n_ctx_ * slice_elems;
    const bool confide0 = cfg_.variant == Variant::Confide0;

    BatchData bd;
    bd.B = B;
    if (!has_conv_) bd.x = Tensor({B, patch_elems});
    else bd.x = Tensor({B * n_ctx_, grid_.fields, grid_.points_y(), grid_.points_x()});
    bd.ic = Tensor({B, slice_elems});

    const std::vector<int> rows = stride_list(n_ctx_ - 1, cfg_.residual_row_stride);
    bd.pairs = static_cast<int>(rows.size());

    std::vector<int> pts;
    if (grid_.dims == 1) {
        for (int i = 1; i + 1 < grid_.points_x(); i += cfg_.residual_col_stride) pts.push_back(i);
    } else {
        pts = stride_list(space, cfg_.residual_col_stride);
    }
    bd.M = bd.pairs * static_cast<int>(pts.size());

    const FamilyInfo& info = family_info(family_);
    if (!confide0) {
        if (grid_.dims == 1) {
            bd.ut = Tensor({B, bd.M});
            bd.ux = Tensor({B, bd.M});
            bd.uxx = Tensor({B, bd.M});
            if (has_state_head_) bd.states = Tensor({B * bd.M, info.head_arity});
        } else {
            bd.res_const_u = Tensor({B, bd.M});
            bd.res_const_v = Tensor({B, bd.M});
            bd.states = Tensor({B * bd.M, info.head_arity});
        }
    } else {
        bd.c0_states = Tensor({B * bd.pairs, slice_elems});
        bd.c0_ut = Tensor({B * bd.pairs, slice_elems});
    }

    const int W = grid_.points_x(), H = grid_.points_y();
    for (int b = 0; b < B; ++b) {
        const Signal s = ds.signal(ids[static_cast<size_t>(b)]);
        const int off = offsets[static_cast<size_t>(b)];
        if (off < 0 || off + n_ctx_ > s.n_slices())
            throw std::invalid_argument("assemble: patch window out of range");

        for (int f = 0; f < grid_.fields; ++f) {
            std::copy_n(s.slice(f, 0), space, bd.ic.ptr() + static_cast<size_t>(b) * slice_elems +
                                                  static_cast<size_t>(f) * space);
            for (int j = 0; j < n_ctx_; ++j) {
                double* dst;
                if (!has_conv_)
                    dst = bd.x.ptr() + static_cast<size_t>(b) * patch_elems +
                          static_cast<size_t>(j) * slice_elems + static_cast<size_t>(f) * space;
                else
                    dst = bd.x.ptr() +
                          ((static_cast<size_t>(b) * n_ctx_ + j) * grid_.fields + f) * space;
                std::copy_n(s.slice(f, off + j), space, dst);
            }
        }

        if (confide0) {
            for (size_t ri = 0; ri < rows.size(); ++ri) {
                const int r = rows[ri];
                double* st = bd.c0_states.ptr() +
                             (static_cast<size_t>(b) * bd.pairs + ri) * slice_elems;
                double* ut = bd.c0_ut.ptr() +
                             (static_cast<size_t>(b) * bd.pairs + ri) * slice_elems;
                for (int f = 0; f < grid_.fields; ++f)
                    for (int p = 0; p < space; ++p) {
                        const double cur = s.slice(f, off + r)[p];
                        st[static_cast<size_t>(f) * space + p] = cur;
                        ut[static_cast<size_t>(f) * space + p] =
                            (s.slice(f, off + r + 1)[p] - cur) / grid_.dt;
                    }
            }
            continue;
        }

        for (size_t ri = 0; ri < rows.size(); ++ri) {
            const int r = rows[ri];
            const double* cur = s.slice(0, off + r);
            const double* nxt = s.slice(0, off + r + 1);
            for (size_t pi = 0; pi < pts.size(); ++pi) {
                const int p = pts[pi];
                const size_t m = ri * pts.size() + pi;
                const size_t col = static_cast<size_t>(b) * bd.M + m;
                if (grid_.dims == 1) {
                    bd.ut.data[static_cast<size_t>(b) * bd.M + m] = (nxt[p] - cur[p]) / grid_.dt;
                    bd.ux.data[static_cast<size_t>(b) * bd.M + m] =
                        (cur[p + 1] - cur[p - 1]) / (2 * grid_.dx);
                    bd.uxx.data[static_cast<size_t>(b) * bd.M + m] =
                        (cur[p + 1] - 2 * cur[p] + cur[p - 1]) / (grid_.dx * grid_.dx);
                    if (has_state_head_) bd.states.data[col] = cur[p];
                } else {
                    const double* vcur = s.slice(1, off + r);
                    const double* vnxt = s.slice(1, off + r + 1);
                    const int y = p / W, x = p % W;
                    auto lap = [&](const double* f) {
                        return (f[y * W + (x + 1) % W] + f[y * W + (x + W - 1) % W] +
                                f[((y + 1) % H) * W + x] + f[((y + H - 1) % H) * W + x] -
                                4 * f[p]) /
                               (grid_.dx * grid_.dx);
                    };
                    const double u = cur[p], v = vcur[p];
                    const double ut = (nxt[p] - u) / grid_.dt;
                    const double vt = (vnxt[p] - v) / grid_.dt;
                    bd.res_const_u.data[static_cast<size_t>(b) * bd.M + m] =
                        ut - kFn2dDiffU * lap(cur) - u + u * u * u + v;
                    bd.res_const_v.data[static_cast<size_t>(b) * bd.M + m] =
                        vt - kFn2dDiffV * lap(vcur);
                    bd.states.data[col * 2] = u;
                    bd.states.data[col * 2 + 1] = v;
                }
            }
        }
    }
    return bd;
}

int ConfideModel::feat_per_slice() const {
    // two stride-2 convolutions with pad 1 map 32x32 to 8x8
    const int h = (grid_.points_y() + 3) / 4, w = (grid_.points_x() + 3) / 4;
    return cfg_.conv_c2 * h * w;
}

ConfideModel::GraphLoss ConfideModel::build_loss(ad::Graph& g, const GraphVars& vars,
                                                 const BatchData& bd) const {
    const int B = bd.B;
    const int slice_elems = grid_.fields * grid_.space_size();
    const int patch_elems = n_ctx_ * slice_elems;

    ad::Var x = g.constant(bd.x);
    ad::Var latent;
    ad::Var target = x;
    if (!has_conv_) {
        latent = enc_mlp_.forward(g, vars.enc, x);
    } else {
        ad::Var h = g.relu(g.conv2d(x, vars.c1k, vars.c1b, 2, 1));
        h = g.relu(g.conv2d(h, vars.c2k, vars.c2b, 2, 1));
        h = g.reshape(h, {B, n_ctx_ * feat_per_slice()});
        latent = enc_mlp_.forward(g, vars.enc, h);
        target = g.reshape(x, {B, patch_elems});
    }

    ad::Var dec_in = latent;
    if (cfg_.variant != Variant::AeIc) dec_in = g.concat_cols(latent, g.constant(bd.ic));
    ad::Var xhat = dec_mlp_.forward(g, vars.dec, dec_in);
    if (has_conv_) {
        const int fh = (grid_.points_y() + 3) / 4, fw = (grid_.points_x() + 3) / 4;
        ad::Var h = g.reshape(g.relu(xhat), {B * n_ctx_, cfg_.conv_c2, fh, fw});
        h = g.relu(g.deconv2d(h, vars.d1k, vars.d1b, 2, 1, 1));
        h = g.deconv2d(h, vars.d2k, vars.d2b, 2, 1, 1);
        xhat = g.reshape(h, {B, patch_elems});
    }
    ad::Var ae = g.mean(g.square(g.sub(xhat, target)));

    ad::Var coef;
    if (cfg_.variant == Variant::Confide0) {
        ad::Var rep = g.repeat_rows(latent, bd.pairs);
        ad::Var inp = g.concat_cols(g.constant(bd.c0_states), rep);
        ad::Var pred = m_net_.forward(g, vars.mnet, inp);
        coef = g.mean(g.square(g.sub(pred, g.constant(bd.c0_ut))));
    } else {
        ad::Var est = scalar_head_.forward(g, vars.shead, latent);  // [B, n_scalars]
        switch (family_) {
            case FamilyId::ConstantCoeff: {
                ad::Var a = g.slice_cols(est, 0, 1);
                ad::Var b = g.slice_cols(est, 1, 2);
                ad::Var c = g.slice_cols(est, 2, 3);
                ad::Var r = g.sub(g.constant(bd.ut), g.col_broadcast_mul(g.constant(bd.uxx), a));
                r = g.sub(r, g.col_broadcast_mul(g.constant(bd.ux), b));
                r = g.col_broadcast_add(r, g.scale(c, -1.0));
                coef = g.mean(g.square(r));
                break;
            }
            case FamilyId::Burgers: {
                ad::Var lat_part = g.linear(latent, vars.h_wlat, vars.h_b1);  // [B,h]
                ad::Var st_part = g.matmul(g.constant(bd.states), vars.h_wstate);
                ad::Var h1 = g.relu(g.block_broadcast_add(st_part, lat_part, bd.M));
                ad::Var bv = state_head_.rest.forward(g, vars.hrest, h1);  // [B*M,1]
                ad::Var bmat = g.reshape(bv, {B, bd.M});
                ad::Var r =
                    g.sub(g.constant(bd.ut), g.col_broadcast_mul(g.constant(bd.uxx), est));
                r = g.sub(r, g.mul(bmat, g.constant(bd.ux)));
                coef = g.mean(g.square(r));
                break;
            }
            case FamilyId::Fn2d: {
                ad::Var lat_part = g.linear(latent, vars.h_wlat, vars.h_b1);
                ad::Var st_part = g.matmul(g.constant(bd.states), vars.h_wstate);
                ad::Var h1 = g.relu(g.block_broadcast_add(st_part, lat_part, bd.M));
                ad::Var rv = state_head_.rest.forward(g, vars.hrest, h1);
                ad::Var rvmat = g.reshape(rv, {B, bd.M});
                ad::Var res_u = g.col_broadcast_add(g.constant(bd.res_const_u), est);
                ad::Var res_v = g.sub(g.constant(bd.res_const_v), rvmat);
                coef = g.scale(g.add(g.mean(g.square(res_u)), g.mean(g.square(res_v))), 0.5);
                break;
            }
        }
    }

    GraphLoss out;
    out.ae = ae;
    out.coef = coef;
    out.total = g.add(g.scale(ae, cfg_.alpha), g.scale(coef, 1.0 - cfg_.alpha));
    return out;
}

TrainResult ConfideModel::train(const data::Dataset& ds, const EpochHook& on_epoch) {
    return train(ds, ds.split_indices("train"), ds.split_indices("val"), on_epoch);
}

TrainResult ConfideModel::train(const data::Dataset& ds, const std::vector<int>& train_ids,
                                std::vector<int> val_ids, const EpochHook& on_epoch) {
    if (ds.family() != family_ || !ds.grid().same_as(grid_))
        throw std::invalid_argument("train: dataset does not match the model");
    if (train_ids.empty()) throw std::invalid_argument("train: empty training split");
    if (val_ids.empty()) val_ids = train_ids;

    auto params = named_params();
    std::vector<Tensor*> ptrs;
    ptrs.reserve(params.size());
    for (auto& [n, t] : params) ptrs.push_back(t);
    opt::AdamConfig acfg;
    acfg.lr = cfg_.lr;
    opt::Adam optimizer(ptrs, acfg);

    const int max_off = grid_.nt + 1 - n_ctx_;
    TrainResult res;
    double best = std::numeric_limits<double>::infinity();
    std::string best_bytes;
    int since_best = 0;

    for (int epoch = 0; epoch < cfg_.max_epochs; ++epoch) {
        optimizer.set_lr(cfg_.lr * std::pow(cfg_.lr_decay, epoch));
        Rng erng(derive_seed(cfg_.seed, kEpochLane, static_cast<uint64_t>(epoch)));
        std::vector<int> order = train_ids;
        erng.shuffle(order);

        int n_batches = 0, skipped = 0;
        double sum_loss = 0.0, sum_ae = 0.0, sum_coef = 0.0;
        for (size_t lo = 0; lo < order.size(); lo += static_cast<size_t>(cfg_.batch_size)) {
            const size_t hi = std::min(order.size(), lo + static_cast<size_t>(cfg_.batch_size));
            std::vector<int> ids(order.begin() + static_cast<long>(lo),
                                 order.begin() + static_cast<long>(hi));
            std::vector<int> offsets(ids.size(), 0);
            if (cfg_.random_offsets)
                for (int& o : offsets)
                    o = static_cast<int>(erng.uniform_index(static_cast<size_t>(max_off + 1)));

            BatchData bd = assemble(ds, ids, offsets);
            ad::Graph g;
            GraphVars vars = register_params(g);
            GraphLoss loss = build_loss(g, vars, bd);
            const double lv = g.value(loss.total).data[0];
            ++n_batches;
            if (!std::isfinite(lv)) {
                ++skipped;
                continue;
            }
            g.backward(loss.total);
            std::vector<const Tensor*> grads;
            grads.reserve(params.size());
            collect_grads(g, vars, grads);
            if (grads.size() != params.size())
                throw std::logic_error("train: gradient/parameter count mismatch");
            if (!optimizer.step(grads)) {
                ++skipped;
                continue;
            }
            sum_loss += lv;
            sum_ae += g.value(loss.ae).data[0];
            sum_coef += g.value(loss.coef).data[0];
        }

        if (skipped > std::max(1.0, cfg_.max_skip_frac * n_batches))
            throw DivergenceError("train: " + std::to_string(skipped) + " of " +
                                  std::to_string(n_batches) + " batches diverged in epoch " +
                                  std::to_string(epoch));
        res.skipped_batches += skipped;
        const int good = n_batches - skipped;
        res.train_loss.push_back(good > 0 ? sum_loss / good : 0.0);
        res.train_ae.push_back(good > 0 ? sum_ae / good : 0.0);
        res.train_coef.push_back(good > 0 ? sum_coef / good : 0.0);

        const LossParts vp = eval_loss(ds, val_ids);
        res.val_loss.push_back(vp.total);
        res.epochs = epoch + 1;
        if (on_epoch) on_epoch(epoch, res.train_loss.back(), vp.total);
        if (vp.total < best) {
            best = vp.total;
            res.best_epoch = epoch;
            since_best = 0;
            std::vector<std::pair<std::string, const Tensor*>> snap;
            snap.reserve(params.size());
            for (auto& [n, t] : params) snap.emplace_back(n, t);
            best_bytes = io::checkpoint_bytes(nlohmann::json::object(), snap);
        } else if (++since_best >= cfg_.patience) {
            break;
        }
    }

    if (!best_bytes.empty()) {
        io::Checkpoint ck = io::parse_checkpoint(best_bytes);
        for (auto& [name, t] : params) {
            const Tensor& saved = ck.tensor(name);
            require_shape(saved, t->shape, ("restore " + name).c_str());
            *t = saved;
        }
    }
    res.best_val = best;
    return res;
}

LossParts ConfideModel::eval_loss(const data::Dataset& ds, const std::vector<int>& ids) const {
    if (ids.empty()) throw std::invalid_argument("eval_loss: empty id list");
    double tot = 0.0, ta = 0.0, tc = 0.0;
    size_t n = 0;
    for (size_t lo = 0; lo < ids.size(); lo += static_cast<size_t>(cfg_.batch_size)) {
        const size_t hi = std::min(ids.size(), lo + static_cast<size_t>(cfg_.batch_size));
        std::vector<int> chunk(ids.begin() + static_cast<long>(lo),
                               ids.begin() + static_cast<long>(hi));
        BatchData bd = assemble(ds, chunk, std::vector<int>(chunk.size(), 0));
        ad::Graph g;
        GraphVars vars = register_params(g);
        GraphLoss loss = build_loss(g, vars, bd);
        const double w = static_cast<double>(chunk.size());
        tot += g.value(loss.total).data[0] * w;
        ta += g.value(loss.ae).data[0] * w;
        tc += g.value(loss.coef).data[0] * w;
        n += chunk.size();
    }
    return {tot / static_cast<double>(n), ta / static_cast<double>(n),
            tc / static_cast<double>(n)};
}

LossParts ConfideModel::batch_gradients(const data::Dataset& ds, const std::vector<int>& ids,
                                        std::vector<std::pair<std::string, Tensor>>& grads_out) {
    BatchData bd = assemble(ds, ids, std::vector<int>(ids.size(), 0));
    ad::Graph g;
    GraphVars vars = register_params(g);
    GraphLoss loss = build_loss(g, vars, bd);
    g.backward(loss.total);
    std::vector<const Tensor*> grads;
    collect_grads(g, vars, grads);
    auto params = named_params();
    grads_out.clear();
    for (size_t i = 0; i < params.size(); ++i)
        grads_out.emplace_back(params[i].first, *grads[i]);
    return {g.value(loss.total).data[0], g.value(loss.ae).data[0], g.value(loss.coef).data[0]};
}

Tensor ConfideModel::encode(const Patch& patch) const {
    if (!patch.grid.same_as(grid_)) throw std::invalid_argument("encode: grid mismatch");
    if (patch.n_ctx != n_ctx_)
        throw std::invalid_argument("encode: patch has " + std::to_string(patch.n_ctx) +
                                    " slices, model expects " + std::to_string(n_ctx_));
    const int space = grid_.space_size();
    if (!has_conv_) {
        Tensor x({1, n_ctx_ * space});
        std::copy_n(patch.fields[0].ptr(), static_cast<size_t>(n_ctx_) * space, x.ptr());
        return enc_mlp_.forward_value(x);
    }
    Tensor x({n_ctx_, grid_.fields, grid_.points_y(), grid_.points_x()});
    for (int j = 0; j < n_ctx_; ++j)
        for (int f = 0; f < grid_.fields; ++f)
            std::copy_n(patch.fields[static_cast<size_t>(f)].ptr() + static_cast<size_t>(j) * space,
                        space,
                        x.ptr() + (static_cast<size_t>(j) * grid_.fields + f) * space);
    Tensor h = conv1_.forward_value(x);
    relu_inplace(h);
    h = conv2_.forward_value(h);
    relu_inplace(h);
    Tensor flat({1, n_ctx_ * feat_per_slice()});
    flat.data = std::move(h.data);
    return enc_mlp_.forward_value(flat);
}

Tensor ConfideModel::reconstruct(const Tensor& latent, const Tensor& ic) const {
    const int slice_elems = grid_.fields * grid_.space_size();
    require_shape(latent, {1, cfg_.d_z}, "reconstruct latent");
    Tensor dec_in;
    if (cfg_.variant == Variant::AeIc) {
        dec_in = latent;
    } else {
        require_shape(ic, {1, slice_elems}, "reconstruct ic");
        dec_in = Tensor({1, cfg_.d_z + slice_elems});
        std::copy_n(latent.ptr(), cfg_.d_z, dec_in.ptr());
        std::copy_n(ic.ptr(), slice_elems, dec_in.ptr() + cfg_.d_z);
    }
    Tensor y = dec_mlp_.forward_value(dec_in);
    if (!has_conv_) return y;
    relu_inplace(y);
    const int fh = (grid_.points_y() + 3) / 4, fw = (grid_.points_x() + 3) / 4;
    Tensor grid_in({n_ctx_, cfg_.conv_c2, fh, fw});
    grid_in.data = std::move(y.data);
    Tensor h = dec_deconv1_.forward_value(grid_in);
    relu_inplace(h);
    h = dec_deconv2_.forward_value(h);
    Tensor out({1, n_ctx_ * slice_elems});
    out.data = std::move(h.data);
    return out;
}

CoefficientEstimate ConfideModel::estimate(const Tensor& latent) const {
    if (cfg_.variant == Variant::Confide0)
        throw std::logic_error("estimate: confide0 has no symbolic estimator");
    require_shape(latent, {1, cfg_.d_z}, "estimate latent");
    CoefficientEstimate e;
    e.family = family_;
    Tensor s = scalar_head_.forward_value(latent);
    e.scalars = s.data;
    if (has_state_head_) {
        auto baked = std::make_shared<BakedHead>();
        const int width = state_head_.b1.dim(0);
        baked->lat_part.assign(static_cast<size_t>(width), 0.0);
        for (int c = 0; c < width; ++c) {
            double v = state_head_.b1.data[static_cast<size_t>(c)];
            for (int i = 0; i < cfg_.d_z; ++i)
                v += latent.data[static_cast<size_t>(i)] *
                     state_head_.w_lat.data[static_cast<size_t>(i) * width + c];
            baked->lat_part[static_cast<size_t>(c)] = v;
        }
        baked->w_state = state_head_.w_state;
        baked->rest = state_head_.rest;
        if (family_ == FamilyId::Burgers)
            e.b_head = [baked](double u) { return eval_baked(*baked, &u, 1); };
        else
            e.rv_head = [baked](double u, double v) {
                const double st[2] = {u, v};
                return eval_baked(*baked, st, 2);
            };
    }
    e.validate();
    return e;
}

std::vector<Tensor> ConfideModel::rollout_rhs_confide0(const Tensor& latent,
                                                       const std::vector<Tensor>& state) const {
    const int space = grid_.space_size();
    const int slice_elems = grid_.fields * space;
    Tensor inp({1, slice_elems + cfg_.d_z});
    for (int f = 0; f < grid_.fields; ++f)
        std::copy_n(state[static_cast<size_t>(f)].ptr(), space,
                    inp.ptr() + static_cast<size_t>(f) * space);
    std::copy_n(latent.ptr(), cfg_.d_z, inp.ptr() + slice_elems);
    Tensor ut = m_net_.forward_value(inp);
    std::vector<Tensor> out;
    for (int f = 0; f < grid_.fields; ++f) {
        Tensor t({space});
        std::copy_n(ut.ptr() + static_cast<size_t>(f) * space, space, t.ptr());
        out.push_back(std::move(t));
    }
    return out;
}

InferResult ConfideModel::infer(const Signal& signal) const {
    if (!signal.grid.same_as(grid_)) throw std::invalid_argument("infer: grid mismatch");
    if (signal.n_slices() < n_ctx_) throw std::invalid_argument("infer: signal shorter than context");

    InferResult out;
    out.n_ctx = n_ctx_;
    Patch ctx = Patch::from_signal(signal, 0, n_ctx_);
    out.latent = encode(ctx);

    const int space = grid_.space_size();
    std::vector<Tensor> start;
    for (int f = 0; f < grid_.fields; ++f) {
        Tensor t({space});
        std::copy_n(signal.slice(f, n_ctx_ - 1), space, t.ptr());
        start.push_back(std::move(t));
    }
    const int steps = grid_.nt - (n_ctx_ - 1);

    Signal roll;
    if (cfg_.variant != Variant::Confide0) {
        out.estimate = estimate(out.latent);
        out.has_estimate = true;
        try {
            roll = solve_explicit(out.estimate, grid_, start, steps);
        } catch (const UnstableError& e) {
            roll = e.partial;
            out.complete = false;
        }
    } else {
        // forward Euler on the learned time derivative; same stability rules
        // as the explicit solver
        const double cap = family_info(family_).blowup_threshold;
        Signal full = Signal::zeros(grid_, steps + 1);
        for (int f = 0; f < grid_.fields; ++f)
            std::copy_n(start[static_cast<size_t>(f)].ptr(), space, full.slice(f, 0));
        std::vector<Tensor> cur = start;
        int valid = 1;
        for (int j = 0; j < steps; ++j) {
            std::vector<Tensor> rhs = rollout_rhs_confide0(out.latent, cur);
            bool ok = true;
            for (int f = 0; f < grid_.fields; ++f) {
                Tensor& t = cur[static_cast<size_t>(f)];
                for (int p = 0; p < space; ++p)
                    t.data[static_cast<size_t>(p)] +=
                        grid_.dt * rhs[static_cast<size_t>(f)].data[static_cast<size_t>(p)];
                if (!grid_.periodic) {
                    t.data.front() = 0.0;
                    t.data.back() = 0.0;
                }
                for (double v : t.data)
                    if (!std::isfinite(v) || std::abs(v) > cap) ok = false;
            }
            if (!ok) {
                out.complete = false;
                break;
            }
            for (int f = 0; f < grid_.fields; ++f)
                std::copy_n(cur[static_cast<size_t>(f)].ptr(), space, full.slice(f, valid));
            ++valid;
        }
        if (valid == steps + 1) {
            roll = std::move(full);
        } else {
            roll = Signal::zeros(grid_, valid);
            for (int f = 0; f < grid_.fields; ++f)
                for (int j = 0; j < valid; ++j)
                    std::copy_n(full.slice(f, j), space, roll.slice(f, j));
        }
    }

    const int n_total = (n_ctx_ - 1) + roll.n_slices();
    Signal pred = Signal::zeros(grid_, n_total);
    for (int f = 0; f < grid_.fields; ++f) {
        for (int j = 0; j < n_ctx_ - 1; ++j)
            std::copy_n(signal.slice(f, j), space, pred.slice(f, j));
        for (int j = 0; j < roll.n_slices(); ++j)
            std::copy_n(roll.slice(f, j), space, pred.slice(f, n_ctx_ - 1 + j));
    }
    out.prediction = std::move(pred);
    return out;
}

void ConfideModel::save(const std::string& path, const nlohmann::json& extra_meta) const {
    nlohmann::json meta;
    meta["family"] = family_name(family_);
    meta["grid"] = data::grid_to_json(grid_);
    meta["config"] = cfg_.to_json();
    meta["n_ctx"] = n_ctx_;
    for (auto it = extra_meta.begin(); it != extra_meta.end(); ++it) meta[it.key()] = it.value();
    io::save_checkpoint(path, meta, named_params());
}

ConfideModel ConfideModel::load(const std::string& path) {
    io::Checkpoint ck = io::load_checkpoint(path);
    const FamilyId family = family_from_name(ck.meta.at("family").get<std::string>());
    const GridSpec grid = data::grid_from_json(ck.meta.at("grid"));
    const TrainConfig cfg = TrainConfig::from_json(ck.meta.at("config"));
    ConfideModel m = init(family, grid, cfg);
    for (auto& [name, t] : m.named_params()) {
        const Tensor& saved = ck.tensor(name);
        require_shape(saved, t->shape, ("load " + name).c_str());
        *t = saved;
    }
    return m;
}

}  // namespace confide::model
