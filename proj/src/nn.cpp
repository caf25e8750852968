#include "confide/nn.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>

namespace confide::nn {

MlpSpec MlpSpec::stack(int in, int hidden, int n_hidden, int out) {
    MlpSpec s;
    s.widths.push_back(in);
    for (int i = 0; i < n_hidden; ++i) s.widths.push_back(hidden);
    s.widths.push_back(out);
    s.validate();
    return s;
}

void MlpSpec::validate() const {
    if (widths.size() < 2) throw std::invalid_argument("MlpSpec: need at least in and out widths");
    for (int wd : widths)
        if (wd <= 0) throw std::invalid_argument("MlpSpec: widths must be positive");
}

namespace {
void kaiming_fill(Tensor& w, Tensor& b, int fan_in, Rng& rng) {
    const double wb = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (double& v : w.data) v = rng.uniform(-wb, wb);
    const double bb = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (double& v : b.data) v = rng.uniform(-bb, bb);
}
}  // namespace

MlpParams MlpParams::init(const MlpSpec& spec, Rng& rng) {
    spec.validate();
    MlpParams p;
    p.spec = spec;
    for (int l = 0; l < spec.n_layers(); ++l) {
        const int in = spec.widths[static_cast<size_t>(l)];
        const int out = spec.widths[static_cast<size_t>(l) + 1];
        Tensor w({in, out});
        Tensor b({out});
        kaiming_fill(w, b, in, rng);
        p.w.push_back(std::move(w));
        p.b.push_back(std::move(b));
    }
    return p;
}

MlpVars MlpParams::register_in(ad::Graph& g) const {
    MlpVars vs;
    for (size_t l = 0; l < w.size(); ++l) {
        vs.w.push_back(g.param(w[l]));
        vs.b.push_back(g.param(b[l]));
    }
    return vs;
}

ad::Var MlpParams::forward(ad::Graph& g, const MlpVars& vs, ad::Var x) const {
    if (vs.w.size() != w.size()) throw std::invalid_argument("MlpParams: vars/layer mismatch");
    ad::Var h = x;
    for (size_t l = 0; l < w.size(); ++l) {
        h = g.linear(h, vs.w[l], vs.b[l]);
        if (l + 1 < w.size()) h = g.relu(h);
    }
    return h;
}

Tensor MlpParams::forward_value(const Tensor& x) const {
    if (x.rank() != 2 || x.dim(1) != spec.in())
        throw std::invalid_argument("MlpParams: input must be [B," + std::to_string(spec.in()) +
                                    "], got " + x.shape_str());
    using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    Mat h = Eigen::Map<const Mat>(x.ptr(), x.dim(0), x.dim(1));
    for (size_t l = 0; l < w.size(); ++l) {
        const int in = w[l].dim(0), out = w[l].dim(1);
        Mat next = h * Eigen::Map<const Mat>(w[l].ptr(), in, out);
        next.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(b[l].ptr(), out);
        if (l + 1 < w.size()) next = next.cwiseMax(0.0);
        h = std::move(next);
    }
    Tensor out({x.dim(0), spec.out()});
    Eigen::Map<Mat>(out.ptr(), out.dim(0), out.dim(1)) = h;
    return out;
}

std::vector<std::pair<std::string, Tensor*>> MlpParams::named_params(const std::string& prefix) {
    std::vector<std::pair<std::string, Tensor*>> out;
    for (size_t l = 0; l < w.size(); ++l) {
        out.emplace_back(prefix + ".w" + std::to_string(l), &w[l]);
        out.emplace_back(prefix + ".b" + std::to_string(l), &b[l]);
    }
    return out;
}

Conv2dLayer Conv2dLayer::init(int c, int f, int kh, int kw, int stride, int pad, Rng& rng) {
    Conv2dLayer layer;
    layer.k = Tensor({f, c, kh, kw});
    layer.b = Tensor({f});
    layer.stride = stride;
    layer.pad = pad;
    kaiming_fill(layer.k, layer.b, c * kh * kw, rng);
    return layer;
}

Tensor Conv2dLayer::forward_value(const Tensor& x) const {
    return ad::conv2d_value(x, k, b, stride, pad);
}

Deconv2dLayer Deconv2dLayer::init(int c, int f, int kh, int kw, int stride, int pad, int out_pad,
                                  Rng& rng) {
    Deconv2dLayer layer;
    layer.k = Tensor({c, f, kh, kw});
    layer.b = Tensor({f});
    layer.stride = stride;
    layer.pad = pad;
    layer.out_pad = out_pad;
    kaiming_fill(layer.k, layer.b, f * kh * kw, rng);
    return layer;
}

Tensor Deconv2dLayer::forward_value(const Tensor& x) const {
    return ad::deconv2d_value(x, k, b, stride, pad, out_pad);
}

}  // namespace confide::nn
