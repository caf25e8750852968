#pragma once

#include <string>
#include <utility>
#include <vector>

#include "confide/graph.hpp"
#include "confide/rng.hpp"
#include "confide/tensor.hpp"

namespace confide::nn {

// Fully connected stack. widths = {in, h1, ..., out}; ReLU after every layer
// except the last.
struct MlpSpec {
    std::vector<int> widths;

    static MlpSpec stack(int in, int hidden, int n_hidden, int out);
    int in() const { return widths.front(); }
    int out() const { return widths.back(); }
    int n_layers() const { return static_cast<int>(widths.size()) - 1; }
    void validate() const;
};

struct MlpVars {
    std::vector<ad::Var> w, b;
};

struct MlpParams {
    MlpSpec spec;
    std::vector<Tensor> w;  // [in,out] per layer
    std::vector<Tensor> b;  // [out] per layer

    // Kaiming-uniform fan-in init: w ~ U[+-sqrt(6/fan_in)], b ~ U[+-1/sqrt(fan_in)].
    static MlpParams init(const MlpSpec& spec, Rng& rng);

    MlpVars register_in(ad::Graph& g) const;
    ad::Var forward(ad::Graph& g, const MlpVars& vs, ad::Var x) const;
    Tensor forward_value(const Tensor& x) const;  // [B,in] -> [B,out], no graph

    std::vector<std::pair<std::string, Tensor*>> named_params(const std::string& prefix);
};

struct Conv2dLayer {
    Tensor k;  // [F,C,kh,kw]
    Tensor b;  // [F]
    int stride = 1, pad = 0;

    static Conv2dLayer init(int c, int f, int kh, int kw, int stride, int pad, Rng& rng);
    Tensor forward_value(const Tensor& x) const;
};

struct Deconv2dLayer {
    Tensor k;  // [C,F,kh,kw]
    Tensor b;  // [F]
    int stride = 1, pad = 0, out_pad = 0;

    static Deconv2dLayer init(int c, int f, int kh, int kw, int stride, int pad, int out_pad,
                              Rng& rng);
    Tensor forward_value(const Tensor& x) const;
};

}  // namespace confide::nn
