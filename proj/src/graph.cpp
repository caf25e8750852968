#include "confide/graph.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>

namespace confide::ad {

using MatMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ConstMatMap =
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

namespace {

ConstMatMap as_mat(const Tensor& t, int rows, int cols) {
    return ConstMatMap(t.ptr(), rows, cols);
}
MatMap as_mat(Tensor& t, int rows, int cols) { return MatMap(t.ptr(), rows, cols); }

// ---- im2col / col2im -------------------------------------------------------
// Column j corresponds to output position (oh, ow), row to (c, i, j) of the
// kernel window. Geometry: in [C,H,W] -> out positions OH x OW with
// OH = (H + 2p - kh)/s + 1.

int conv_out_dim(int in, int k, int stride, int pad) {
    int padded = in + 2 * pad;
    if (padded < k) throw std::invalid_argument("conv2d: kernel larger than padded input");
    return (padded - k) / stride + 1;
}

void im2col(const double* img, int C, int H, int W, int kh, int kw, int stride, int pad,
            double* col /* [C*kh*kw, OH*OW] */) {
    const int OH = conv_out_dim(H, kh, stride, pad);
    const int OW = conv_out_dim(W, kw, stride, pad);
    const int ncols = OH * OW;
    for (int c = 0; c < C; ++c) {
        for (int ki = 0; ki < kh; ++ki) {
            for (int kj = 0; kj < kw; ++kj) {
                double* row = col + (static_cast<size_t>((c * kh + ki) * kw + kj)) * ncols;
                for (int oh = 0; oh < OH; ++oh) {
                    const int ih = oh * stride - pad + ki;
                    const bool hok = ih >= 0 && ih < H;
                    for (int ow = 0; ow < OW; ++ow) {
                        const int iw = ow * stride - pad + kj;
                        row[oh * OW + ow] = (hok && iw >= 0 && iw < W)
                                                ? img[(c * H + ih) * W + iw]
                                                : 0.0;
                    }
                }
            }
        }
    }
}

void col2im_add(const double* col, int C, int H, int W, int kh, int kw, int stride, int pad,
                double* img /* accumulated into [C,H,W] */) {
    const int OH = conv_out_dim(H, kh, stride, pad);
    const int OW = conv_out_dim(W, kw, stride, pad);
    const int ncols = OH * OW;
    for (int c = 0; c < C; ++c) {
        for (int ki = 0; ki < kh; ++ki) {
            for (int kj = 0; kj < kw; ++kj) {
                const double* row = col + (static_cast<size_t>((c * kh + ki) * kw + kj)) * ncols;
                for (int oh = 0; oh < OH; ++oh) {
                    const int ih = oh * stride - pad + ki;
                    if (ih < 0 || ih >= H) continue;
                    for (int ow = 0; ow < OW; ++ow) {
                        const int iw = ow * stride - pad + kj;
                        if (iw < 0 || iw >= W) continue;
                        img[(c * H + ih) * W + iw] += row[oh * OW + ow];
                    }
                }
            }
        }
    }
}

void check_conv_shapes(const Tensor& x, const Tensor& k, const Tensor& b) {
    if (x.rank() != 4) throw std::invalid_argument("conv2d: input must be [N,C,H,W]");
    if (k.rank() != 4) throw std::invalid_argument("conv2d: kernel must be rank 4");
    if (b.rank() != 1) throw std::invalid_argument("conv2d: bias must be rank 1");
}

}  // namespace

Tensor conv2d_value(const Tensor& x, const Tensor& k, const Tensor& b, int stride, int pad) {
    check_conv_shapes(x, k, b);
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int F = k.dim(0), kh = k.dim(2), kw = k.dim(3);
    if (k.dim(1) != C) throw std::invalid_argument("conv2d: channel mismatch");
    if (b.dim(0) != F) throw std::invalid_argument("conv2d: bias size mismatch");
    const int OH = conv_out_dim(H, kh, stride, pad);
    const int OW = conv_out_dim(W, kw, stride, pad);

    Tensor out({N, F, OH, OW});
    std::vector<double> col(static_cast<size_t>(C * kh * kw) * OH * OW);
    auto kmat = as_mat(k, F, C * kh * kw);
    for (int n = 0; n < N; ++n) {
        im2col(x.ptr() + static_cast<size_t>(n) * C * H * W, C, H, W, kh, kw, stride, pad,
               col.data());
        ConstMatMap cm(col.data(), C * kh * kw, OH * OW);
        MatMap om(out.ptr() + static_cast<size_t>(n) * F * OH * OW, F, OH * OW);
        om.noalias() = kmat * cm;
        for (int f = 0; f < F; ++f) om.row(f).array() += b.data[static_cast<size_t>(f)];
    }
    return out;
}

Tensor deconv2d_value(const Tensor& x, const Tensor& k, const Tensor& b, int stride, int pad,
                      int out_pad) {
    check_conv_shapes(x, k, b);
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int F = k.dim(1), kh = k.dim(2), kw = k.dim(3);
    if (k.dim(0) != C) throw std::invalid_argument("deconv2d: channel mismatch");
    if (b.dim(0) != F) throw std::invalid_argument("deconv2d: bias size mismatch");
    if (out_pad < 0 || out_pad >= stride)
        throw std::invalid_argument("deconv2d: out_pad must be in [0, stride)");
    const int OH = (H - 1) * stride - 2 * pad + kh + out_pad;
    const int OW = (W - 1) * stride - 2 * pad + kw + out_pad;
    if (OH <= 0 || OW <= 0) throw std::invalid_argument("deconv2d: empty output");

    Tensor out({N, F, OH, OW});
    std::vector<double> cols(static_cast<size_t>(F * kh * kw) * H * W);
    auto kmat = as_mat(k, C, F * kh * kw);
    for (int n = 0; n < N; ++n) {
        ConstMatMap xm(x.ptr() + static_cast<size_t>(n) * C * H * W, C, H * W);
        MatMap cm(cols.data(), F * kh * kw, H * W);
        cm.noalias() = kmat.transpose() * xm;
        double* dst = out.ptr() + static_cast<size_t>(n) * F * OH * OW;
        col2im_add(cols.data(), F, OH, OW, kh, kw, stride, pad, dst);
        for (int f = 0; f < F; ++f) {
            double* chan = dst + static_cast<size_t>(f) * OH * OW;
            for (int i = 0; i < OH * OW; ++i) chan[i] += b.data[static_cast<size_t>(f)];
        }
    }
    return out;
}

// ---- graph plumbing --------------------------------------------------------

int Graph::push(Node n) {
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

Graph::Node Graph::op_node(std::initializer_list<int> parents) {
    Node n;
    size_t i = 0;
    for (int p : parents) {
        n.parents[i++] = p;
        if (nodes_[static_cast<size_t>(p)].needs_grad) n.needs_grad = true;
    }
    return n;
}

const Tensor& Graph::value(Var v) const { return val(v.id); }

Tensor& Graph::grad_buf(int id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (n.grad.data.empty()) n.grad = Tensor(val(id).shape);
    return n.grad;
}

const Tensor& Graph::grad(Var v) {
    Node& n = nodes_[static_cast<size_t>(v.id)];
    if (!n.grad.data.empty()) return n.grad;
    if (zero_scratch_.shape != val(v.id).shape) zero_scratch_ = Tensor(val(v.id).shape);
    return zero_scratch_;
}

void Graph::check_same_graph(Var a, Var b) const {
    if (a.g != this || b.g != this) throw std::invalid_argument("graph: vars from different graphs");
}

Var Graph::constant(Tensor v) {
    Node n;
    n.owned = std::move(v);
    n.needs_grad = false;
    return {this, push(std::move(n))};
}

Var Graph::param(const Tensor& external) {
    Node n;
    n.external = &external;
    n.needs_grad = true;
    return {this, push(std::move(n))};
}

Var Graph::linear(Var x, Var w, Var b) {
    check_same_graph(x, w);
    check_same_graph(x, b);
    const Tensor& xv = val(x.id);
    const Tensor& wv = val(w.id);
    const Tensor& bv = val(b.id);
    if (xv.rank() != 2 || wv.rank() != 2 || bv.rank() != 1 || xv.dim(1) != wv.dim(0) ||
        wv.dim(1) != bv.dim(0))
        throw std::invalid_argument("linear: shape mismatch x" + xv.shape_str() + " w" +
                                    wv.shape_str() + " b" + bv.shape_str());
    const int B = xv.dim(0), in = xv.dim(1), out = wv.dim(1);

    Node n = op_node({x.id, w.id, b.id});
    n.owned = Tensor({B, out});
    {
        auto om = as_mat(n.owned, B, out);
        om.noalias() = as_mat(xv, B, in) * as_mat(wv, in, out);
        om.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bv.ptr(), out);
    }
    int self = push(std::move(n));
    int xid = x.id, wid = w.id, bid = b.id;
    nodes_[static_cast<size_t>(self)].backprop = [this, self, xid, wid, bid, B, in, out]() {
        auto gout = as_mat(grad_buf(self), B, out);
        if (nodes_[static_cast<size_t>(xid)].needs_grad)
            as_mat(grad_buf(xid), B, in).noalias() += gout * as_mat(val(wid), in, out).transpose();
        if (nodes_[static_cast<size_t>(wid)].needs_grad)
            as_mat(grad_buf(wid), in, out).noalias() += as_mat(val(xid), B, in).transpose() * gout;
        if (nodes_[static_cast<size_t>(bid)].needs_grad)
            Eigen::Map<Eigen::RowVectorXd>(grad_buf(bid).ptr(), out) += gout.colwise().sum();
    };
    return {this, self};
}

Var Graph::matmul(Var a, Var b) {
    check_same_graph(a, b);
    const Tensor& av = val(a.id);
    const Tensor& bv = val(b.id);
    if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0))
        throw std::invalid_argument("matmul: shape mismatch " + av.shape_str() + " x " +
                                    bv.shape_str());
    const int p = av.dim(0), q = av.dim(1), r = bv.dim(1);
    Node n = op_node({a.id, b.id});
    n.owned = Tensor({p, r});
    as_mat(n.owned, p, r).noalias() = as_mat(av, p, q) * as_mat(bv, q, r);
    int self = push(std::move(n));
    int aid = a.id, bid = b.id;
    nodes_[static_cast<size_t>(self)].backprop = [this, self, aid, bid, p, q, r]() {
        auto gout = as_mat(grad_buf(self), p, r);
        if (nodes_[static_cast<size_t>(aid)].needs_grad)
            as_mat(grad_buf(aid), p, q).noalias() += gout * as_mat(val(bid), q, r).transpose();
        if (nodes_[static_cast<size_t>(bid)].needs_grad)
            as_mat(grad_buf(bid), q, r).noalias() += as_mat(val(aid), p, q).transpose() * gout;
    };
    return {this, self};
}

Var Graph::relu(Var x) {
    const Tensor& xv = val(x.id);
    Node n = op_node({x.id});
    n.owned = xv;  // copy then clamp
    for (double& v : n.owned.data)
        if (v < 0.0) v = 0.0;
    int self = push(std::move(n));
    int xid = x.id;
    nodes_[static_cast<size_t>(self)].backprop = [this, self, xid]() {
        if (!nodes_[static_cast<size_t>(xid)].needs_grad) return;
        const Tensor& xv2 = val(xid);
        Tensor& gx = grad_buf(xid);
        const Tensor& gout = grad_buf(self);
        for (size_t i = 0; i < gx.data.size(); ++i)
            if (xv2.data[i] > 0.0) gx.data[i] += gout.data[i];
    };
    return {this, self};
}

namespace {
void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b))
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " +
                                    b.shape_str());
}
}  // namespace

Var Graph::add(Var a, Var b) {
    check_same_graph(a, b);
    const Tensor& av = val(a.id);
    const Tensor& bv = val(b.id);
    check_same_shape(av, bv, "add");
    Node n = op_node({a.id, b.id});
    n.owned = av;
    for (size_t i = 0; i < n.owned.data.size(); ++i) n.owned.data[i] += bv.data[i];
    int self = push(std::move(n));
    int aid = a.id, bid = b.id;
    nodes_[static_cast<size_t>(self)].backprop = [this, self, aid, bid]() {
        const Tensor& gout = grad_buf(self);
        for (int pid : {aid, bid}) {
            if (!nodes_[static_cast<size_t>(pid)].needs_grad) continue;
            Tensor& gp = grad_buf(pid);
            for (size_t i = 0; i < gp.data.size(); ++i) gp.data[i] += gout.data[i];
        }
    };
    return {this, self};
}

Var Graph::sub(Var a, Var b) {
    check_same_graph(a, b);
    const Tensor& av = val(a.id);
    const Tensor& bv = val(b.id);
    check_same_shape(av, bv, "sub");
    Node n = op_node({a.id, b.id});
    n.owned = av;
    for (size_t i = 0; i < n.owned.data.size(); ++i) n.owned.data[i] -= bv.data[i];
    int self = push(std::move(n));
    int aid = a.id, bid = b.id;
    nodes_[static_cast<size_t>(self)].backprop = [this, self, aid, bid]() {
        const Tensor& gout = grad_buf(self);
        if (nodes_[static_cast<size_t>(aid)].needs_grad) {
            Tensor& ga = grad_buf(aid);
            for (size_t i = 0; i < ga.data.size(); ++i) ga.data[i] += gout.data[i];
        }
        if (nodes_[static_cast<size_t>(bid)].needs_grad) {
            Tensor& gb = grad_buf(bid);
            for (size_t i = 0; i < gb.data.size(); ++i) gb.data[i] -= gout.data[i];
        }
    };
    return {this, self};
}

Var Graph::mul(Var a, Var b) {
    check_same_graph(a, b);
    const Tensor& av = val(a.id);
    const Tensor& bv = val(b.id);
    check_same_shape(av, bv, "mul");
    Node n = op_node({a.id, b.id});
    n.owned = av;
    for (size_t i = 0; i < n.owned.data.size(); ++i) n.owned.data[i] *= bv.data[i];
    int self = push(std::move(n));
    int aid = a.id, bid = b.id;
    nodes_[static_cast<size_t>(self)].backprop = [this, self, aid, bid]() {
        const Tensor& gout = grad_buf(self);
        if (nodes_[static_cast<size_t>(aid)].needs_grad) {
            Tensor& ga = grad_buf(aid);
            const Tensor& bv2 = val(bid);
            for (size_t i = 0; i < ga.data.size(); ++i) ga.data[i] += gout.data[i] * bv2.data[i];
        }
        if (nodes_[static_cast<size_t>(bid)].needs_grad) {
            Tensor& gb = grad_buf(bid);
            const Tensor& av2 = val(aid);
            for (size_t i = 0; i < gb.data.size(); ++i) gb.data[i] += gout.data[i] * av2.data[i];
        }
    };
    return {this, self};
}

Var Graph::square(Var x) {
    const Tensor& xv = val(x.id);
    Node n = op_node({x.id});
    n.owned = xv;
    for (double& v : n.owned.data) v *= v;
    int self = push(std::move(n));
    int xid = x.id;
    nodes_[static_cast<size_t>(self)].backprop = [this, self, xid]() {
        if (!nodes_[static_cast<size_t>(xid)].needs_grad) return;
        const Tensor& gout = grad_buf(self);
        const Tensor& xv2 = val(xid);
        Tensor& gx = grad_buf(xid);
        for (size_t i = 0; i < gx.data.size(); ++i) gx.data[i] += 2.0 * xv2.data[i] * gout.data[i];
    };
    return {this, self};
}

Var Graph::scale(Var x, double c) {
    const Tensor& xv = val(x.id);
    Node n = op_node({x.id});
    n.owned = xv;
    for (double& v : n.owned.data) v *= c;
    int self = push(std::move(n));
    int xid = x.id;
    nodes_[static_cast<size_t>(self)].backprop = [this, self, xid, c]() {
        if (!nodes_[static_cast<size_t>(xid)].needs_grad) return;
        const Tensor& gout = grad_buf(self);
        Tensor& gx = grad_buf(xid);
        for (size_t i = 0; i < gx.data.size(); ++i) gx.data[i] += c * gout.data[i];
    };
    return {this, self};
}

namespace {
void check_scalar_node(const Tensor& s, const char* op) {
    if (s.size() != 1) throw std::invalid_argument(std::string(op) + ": scalar operand required");
}
}  // namespace

Var Graph::scale_by(Var x, Var s) {
    check_same_graph(x, s);
    const Tensor& xv = val(x.id);
    const Tensor& sv = val(s.id);
    check_scalar_node(sv, "scale_by");
    Node n = op_node({x.id, s.id});
    n.owned = xv;
    const double c = sv.data[0];
    for (double& v : n.owned.data) v *= c;
    int self = push(std::move(n));
    int xid = x.id, sid = s.id;
    nodes_[static_cast<size_t>(self)].backprop = [this, self, xid, sid]() {
        const Tensor& gout = grad_buf(self);
        const double sval = val(sid).data[0];
        if (nodes_[static_cast<size_t>(xid)].needs_grad) {
            Tensor& gx = grad_buf(xid);
            for (size_t i = 0; i < gx.data.size(); ++i) gx.data[i] += sval * gout.data[i];
        }
        if (nodes_[static_cast<size_t>(sid)].needs_grad) {
            const Tensor& xv2 = val(xid);
            double acc = 0.0;
            for (size_t i = 0; i < gout.data.size(); ++i) acc += gout.data[i] * xv2.data[i];
            grad_buf(sid).data[0] += acc;
        }
    };
    return {this, self};
}

Var Graph::add_scalar(Var x, Var s) {
    check_same_graph(x, s);
    const Tensor& xv = val(x.id);
    const Tensor& sv = val(s.id);
    check_scalar_node(sv, "add_scalar");
    Node n = op_node({x.id, s.id});
    n.owned = xv;
    const double c = sv.data[0];
    for (double& v : n.owned.data) v += c;
    int self = push(std::move(n));
    int xid = x.id, sid = s.id;
    nodes_[static_cast<size_t>(self)].backprop = [this, self, xid, sid]() {
        const Tensor& gout = grad_buf(self);
        if (nodes_[static_cast<size_t>(xid)].needs_grad) {
            Tensor& gx = grad_buf(xid);
            for (size_t i = 0; i < gx.data.size(); ++i) gx.data[i] += gout.data[i];
        }
        if (nodes_[static_cast<size_t>(sid)].needs_grad) {
            double acc = 0.0;
            for (double gv : gout.data) acc += gv;
            grad_buf(sid).data[0] += acc;
        }
    };
    return {this, self};
}

Var Graph::sub_scalar(Var x, Var s) {
    Var neg = scale_by(constant(Tensor(val(x.id).shape, 1.0)), s);  // broadcast s
    return sub(x, neg);
}

Var Graph::mean(Var x) {
    const Tensor& xv = val(x.id);
    const double inv = 1.0 / static_cast<double>(xv.size());
    Node n = op_node({x.id});
    double acc = 0.0;
    for (double v : xv.data) acc += v;
    n.owned = Tensor::scalar(acc * inv);
    int self = push(std::move(n));
    int xid = x.id;
    nodes_[static_cast<size_t>(self)].backprop = [this, self, xid, inv]() {
        if (!nodes_[static_cast<size_t>(xid)].needs_grad) return;
        const double g = grad_buf(self).data[0] * inv;
        Tensor& gx = grad_buf(xid);
        for (double& v : gx.data) v += g;
    };
    return {this, self};
}

Var Graph::sum(Var x) {
    const Tensor& xv = val(x.id);
    Node n = op_node({x.id});
    double acc = 0.0;
    for (double v : xv.data) acc += v;
    n.owned = Tensor::scalar(acc);
    int self = push(std::move(n));
    int xid = x.id;
    nodes_[static_cast<size_t>(self)].backprop = [this, self, xid]() {
        if (!nodes_[static_cast<size_t>(xid)].needs_grad) return;
        const double g = grad_buf(self).data[0];
        Tensor& gx = grad_buf(xid);
        for (double& v : gx.data) v += g;
    };
    return {this, self};
}

Var Graph::reshape(Var x, std::vector<int> shape) {
    const Tensor& xv = val(x.id);
    if (Tensor::checked_size(shape) != xv.size())
        throw std::invalid_argument("reshape: element count mismatch");
    Node n = op_node({x.id});
    n.owned = Tensor(std::move(shape), xv.data);
    int self = push(std::move(n));
    int xid = x.id;
    nodes_[static_cast<size_t>(self)].backprop = [this, self, xid]() {
        if (!nodes_[static_cast<size_t>(xid)].needs_grad) return;
        const Tensor& gout = grad_buf(self);
        Tensor& gx = grad_buf(xid);
        for (size_t i = 0; i < gx.data.size(); ++i) gx.data[i] += gout.data[i];
    };
    return {this, self};
}

Var Graph::concat_cols(Var a, Var b) {
    check_same_graph(a, b);
    const Tensor& av = val(a.id);
    const Tensor& bv = val(b.id);
    if (av.rank() != 2 || bv.rank() != 2 || av.dim(0) != bv.dim(0))
        throw std::invalid_argument("concat_cols: need matching row counts");
    const int B = av.dim(0), na = av.dim(1), nb = bv.dim(1);
    Node n = op_node({a.id, b.id});
    n.owned = Tensor({B, na + nb});
    for (int r = 0; r < B; ++r) {
        std::copy_n(av.ptr() + static_cast<size_t>(r) * na, na,
                    n.owned.ptr() + static_cast<size_t>(r) * (na + nb));
        std::copy_n(bv.ptr() + static_cast<size_t>(r) * nb, nb,
                    n.owned.ptr() + static_cast<size_t>(r) * (na + nb) + na);
    }
    int self = push(std::move(n));
    int aid = a.id, bid = b.id;
    nodes_[static_cast<size_t>(self)].backprop = [this, self, aid, bid, B, na, nb]() {
        const Tensor& gout = grad_buf(self);
        if (nodes_[static_cast<size_t>(aid)].needs_grad) {
            Tensor& ga = grad_buf(aid);
            for (int r = 0; r < B; ++r)
                for (int c = 0; c < na; ++c)
                    ga.data[static_cast<size_t>(r) * na + c] +=
                        gout.data[static_cast<size_t>(r) * (na + nb) + c];
        }
        if (nodes_[static_cast<size_t>(bid)].needs_grad) {
            Tensor& gb = grad_buf(bid);
            for (int r = 0; r < B; ++r)
                for (int c = 0; c < nb; ++c)
                    gb.data[static_cast<size_t>(r) * nb + c] +=
                        gout.data[static_cast<size_t>(r) * (na + nb) + na + c];
        }
    };
    return {this, self};
}

Var Graph::slice_row(Var x, int row) {
    const Tensor& xv = val(x.id);
    if (xv.rank() != 2 || row < 0 || row >= xv.dim(0))
        throw std::invalid_argument("slice_row: bad row index");
    const int m = xv.dim(1);
    Node n = op_node({x.id});
    n.owned = Tensor({1, m});
    std::copy_n(xv.ptr() + static_cast<size_t>(row) * m, m, n.owned.ptr());
    int self = push(std::move(n));
    int xid = x.id;
    nodes_[static_cast<size_t>(self)].backprop = [this, self, xid, row, m]() {
        if (!nodes_[static_cast<size_t>(xid)].needs_grad) return;
        const Tensor& gout = grad_buf(self);
        Tensor& gx = grad_buf(xid);
        for (int c = 0; c < m; ++c) gx.data[static_cast<size_t>(row) * m + c] += gout.data[c];
    };
    return {this, self};
}

Var Graph::slice_cols(Var x, int lo, int hi) {
    const Tensor& xv = val(x.id);
    if (xv.rank() != 2 || lo < 0 || hi > xv.dim(1) || lo >= hi)
        throw std::invalid_argument("slice_cols: bad column range");
    const int B = xv.dim(0), m = xv.dim(1), w = hi - lo;
    Node n = op_node({x.id});
    n.owned = Tensor({B, w});
    for (int r = 0; r < B; ++r)
        std::copy_n(xv.ptr() + static_cast<size_t>(r) * m + lo, w,
                    n.owned.ptr() + static_cast<size_t>(r) * w);
    int self = push(std::move(n));
    int xid = x.id;
    nodes_[static_cast<size_t>(self)].backprop = [this, self, xid, lo, B, m, w]() {
        if (!nodes_[static_cast<size_t>(xid)].needs_grad) return;
        const Tensor& gout = grad_buf(self);
        Tensor& gx = grad_buf(xid);
        for (int r = 0; r < B; ++r)
            for (int c = 0; c < w; ++c)
                gx.data[static_cast<size_t>(r) * m + lo + c] +=
                    gout.data[static_cast<size_t>(r) * w + c];
    };
    return {this, self};
}

Var Graph::row_broadcast_add(Var x, Var r) {
    check_same_graph(x, r);
    const Tensor& xv = val(x.id);
    const Tensor& rv = val(r.id);
    if (xv.rank() != 2 || rv.rank() != 2 || rv.dim(0) != 1 || rv.dim(1) != xv.dim(1))
        throw std::invalid_argument("row_broadcast_add: need [P,m] and [1,m]");
    const int P = xv.dim(0), m = xv.dim(1);
    Node n = op_node({x.id, r.id});
    n.owned = xv;
    for (int i = 0; i < P; ++i)
        for (int c = 0; c < m; ++c) n.owned.data[static_cast<size_t>(i) * m + c] += rv.data[c];
    int self = push(std::move(n));
    int xid = x.id, rid = r.id;
    nodes_[static_cast<size_t>(self)].backprop = [this, self, xid, rid, P, m]() {
        const Tensor& gout = grad_buf(self);
        if (nodes_[static_cast<size_t>(xid)].needs_grad) {
            Tensor& gx = grad_buf(xid);
            for (size_t i = 0; i < gx.data.size(); ++i) gx.data[i] += gout.data[i];
        }
        if (nodes_[static_cast<size_t>(rid)].needs_grad) {
            Tensor& gr = grad_buf(rid);
            for (int i = 0; i < P; ++i)
                for (int c = 0; c < m; ++c) gr.data[c] += gout.data[static_cast<size_t>(i) * m + c];
        }
    };
    return {this, self};
}

Var Graph::col_broadcast_mul(Var x, Var s) {
    check_same_graph(x, s);
    const Tensor& xv = val(x.id);
    const Tensor& sv = val(s.id);
    if (xv.rank() != 2 || sv.rank() != 2 || sv.dim(1) != 1 || sv.dim(0) != xv.dim(0))
        throw std::invalid_argument("col_broadcast_mul: need [B,n] and [B,1]");
    const int B = xv.dim(0), n = xv.dim(1);
    Node nd = op_node({x.id, s.id});
    nd.owned = xv;
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < n; ++c) nd.owned.data[static_cast<size_t>(b) * n + c] *= sv.data[static_cast<size_t>(b)];
    int self = push(std::move(nd));
    int xid = x.id, sid = s.id;
    nodes_[static_cast<size_t>(self)].backprop = [this, self, xid, sid, B, n]() {
        const Tensor& gout = grad_buf(self);
        const Tensor& xv2 = val(xid);
        const Tensor& sv2 = val(sid);
        if (nodes_[static_cast<size_t>(xid)].needs_grad) {
            Tensor& gx = grad_buf(xid);
            for (int b = 0; b < B; ++b)
                for (int c = 0; c < n; ++c) {
                    const size_t i = static_cast<size_t>(b) * n + c;
                    gx.data[i] += gout.data[i] * sv2.data[static_cast<size_t>(b)];
                }
        }
        if (nodes_[static_cast<size_t>(sid)].needs_grad) {
            Tensor& gs = grad_buf(sid);
            for (int b = 0; b < B; ++b) {
                double acc = 0.0;
                for (int c = 0; c < n; ++c) {
                    const size_t i = static_cast<size_t>(b) * n + c;
                    acc += gout.data[i] * xv2.data[i];
                }
                gs.data[static_cast<size_t>(b)] += acc;
            }
        }
    };
    return {this, self};
}

Var Graph::col_broadcast_add(Var x, Var s) {
    check_same_graph(x, s);
    const Tensor& xv = val(x.id);
    const Tensor& sv = val(s.id);
    if (xv.rank() != 2 || sv.rank() != 2 || sv.dim(1) != 1 || sv.dim(0) != xv.dim(0))
        throw std::invalid_argument("col_broadcast_add: need [B,n] and [B,1]");
    const int B = xv.dim(0), n = xv.dim(1);
    Node nd = op_node({x.id, s.id});
    nd.owned = xv;
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < n; ++c) nd.owned.data[static_cast<size_t>(b) * n + c] += sv.data[static_cast<size_t>(b)];
    int self = push(std::move(nd));
    int xid = x.id, sid = s.id;
    nodes_[static_cast<size_t>(self)].backprop = [this, self, xid, sid, B, n]() {
        const Tensor& gout = grad_buf(self);
        if (nodes_[static_cast<size_t>(xid)].needs_grad) {
            Tensor& gx = grad_buf(xid);
            for (size_t i = 0; i < gx.data.size(); ++i) gx.data[i] += gout.data[i];
        }
        if (nodes_[static_cast<size_t>(sid)].needs_grad) {
            Tensor& gs = grad_buf(sid);
            for (int b = 0; b < B; ++b) {
                double acc = 0.0;
                for (int c = 0; c < n; ++c) acc += gout.data[static_cast<size_t>(b) * n + c];
                gs.data[static_cast<size_t>(b)] += acc;
            }
        }
    };
    return {this, self};
}

Var Graph::repeat_rows(Var x, int times) {
    const Tensor& xv = val(x.id);
    if (xv.rank() != 2) throw std::invalid_argument("repeat_rows: need rank-2 input");
    if (times < 1) throw std::invalid_argument("repeat_rows: times must be positive");
    const int B = xv.dim(0), d = xv.dim(1);
    Node nd = op_node({x.id});
    nd.owned = Tensor({B * times, d});
    for (int b = 0; b < B; ++b)
        for (int t = 0; t < times; ++t)
            std::copy_n(xv.ptr() + static_cast<size_t>(b) * d, d,
                        nd.owned.ptr() + (static_cast<size_t>(b) * times + t) * d);
    int self = push(std::move(nd));
    int xid = x.id;
    nodes_[static_cast<size_t>(self)].backprop = [this, self, xid, B, d, times]() {
        if (!nodes_[static_cast<size_t>(xid)].needs_grad) return;
        const Tensor& gout = grad_buf(self);
        Tensor& gx = grad_buf(xid);
        for (int b = 0; b < B; ++b)
            for (int t = 0; t < times; ++t) {
                const double* src = gout.ptr() + (static_cast<size_t>(b) * times + t) * d;
                double* dst = gx.ptr() + static_cast<size_t>(b) * d;
                for (int c = 0; c < d; ++c) dst[c] += src[c];
            }
    };
    return {this, self};
}

Var Graph::block_broadcast_add(Var x, Var r, int block) {
    check_same_graph(x, r);
    const Tensor& xv = val(x.id);
    const Tensor& rv = val(r.id);
    if (xv.rank() != 2 || rv.rank() != 2 || block < 1 || rv.dim(1) != xv.dim(1) ||
        xv.dim(0) != rv.dim(0) * block)
        throw std::invalid_argument("block_broadcast_add: need [B*block,m] and [B,m]");
    const int B = rv.dim(0), m = xv.dim(1);
    Node nd = op_node({x.id, r.id});
    nd.owned = xv;
    for (int b = 0; b < B; ++b)
        for (int i = 0; i < block; ++i)
            for (int c = 0; c < m; ++c)
                nd.owned.data[(static_cast<size_t>(b) * block + i) * m + c] +=
                    rv.data[static_cast<size_t>(b) * m + c];
    int self = push(std::move(nd));
    int xid = x.id, rid = r.id;
    nodes_[static_cast<size_t>(self)].backprop = [this, self, xid, rid, B, m, block]() {
        const Tensor& gout = grad_buf(self);
        if (nodes_[static_cast<size_t>(xid)].needs_grad) {
            Tensor& gx = grad_buf(xid);
            for (size_t i = 0; i < gx.data.size(); ++i) gx.data[i] += gout.data[i];
        }
        if (nodes_[static_cast<size_t>(rid)].needs_grad) {
            Tensor& gr = grad_buf(rid);
            for (int b = 0; b < B; ++b)
                for (int i = 0; i < block; ++i)
                    for (int c = 0; c < m; ++c)
                        gr.data[static_cast<size_t>(b) * m + c] +=
                            gout.data[(static_cast<size_t>(b) * block + i) * m + c];
        }
    };
    return {this, self};
}

Var Graph::conv2d(Var x, Var k, Var b, int stride, int pad) {
    check_same_graph(x, k);
    check_same_graph(x, b);
    Node n = op_node({x.id, k.id, b.id});
    n.owned = conv2d_value(val(x.id), val(k.id), val(b.id), stride, pad);
    int self = push(std::move(n));
    int xid = x.id, kid = k.id, bid = b.id;
    nodes_[static_cast<size_t>(self)].backprop = [this, self, xid, kid, bid, stride, pad]() {
        const Tensor& xv = val(xid);
        const Tensor& kv = val(kid);
        const Tensor& gout = grad_buf(self);
        const int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
        const int F = kv.dim(0), kh = kv.dim(2), kw = kv.dim(3);
        const int OH = gout.dim(2), OW = gout.dim(3);
        const bool need_x = nodes_[static_cast<size_t>(xid)].needs_grad;
        const bool need_k = nodes_[static_cast<size_t>(kid)].needs_grad;
        const bool need_b = nodes_[static_cast<size_t>(bid)].needs_grad;
        auto kmat = as_mat(kv, F, C * kh * kw);
        std::vector<double> col(static_cast<size_t>(C * kh * kw) * OH * OW);
        std::vector<double> gcol(col.size());
        for (int nn = 0; nn < N; ++nn) {
            ConstMatMap gm(gout.ptr() + static_cast<size_t>(nn) * F * OH * OW, F, OH * OW);
            if (need_k) {
                im2col(xv.ptr() + static_cast<size_t>(nn) * C * H * W, C, H, W, kh, kw, stride,
                       pad, col.data());
                ConstMatMap cm(col.data(), C * kh * kw, OH * OW);
                as_mat(grad_buf(kid), F, C * kh * kw).noalias() += gm * cm.transpose();
            }
            if (need_x) {
                MatMap gcm(gcol.data(), C * kh * kw, OH * OW);
                gcm.noalias() = kmat.transpose() * gm;
                col2im_add(gcol.data(), C, H, W, kh, kw, stride, pad,
                           grad_buf(xid).ptr() + static_cast<size_t>(nn) * C * H * W);
            }
            if (need_b) {
                Tensor& gb = grad_buf(bid);
                for (int f = 0; f < F; ++f) gb.data[static_cast<size_t>(f)] += gm.row(f).sum();
            }
        }
    };
    return {this, self};
}

Var Graph::deconv2d(Var x, Var k, Var b, int stride, int pad, int out_pad) {
    check_same_graph(x, k);
    check_same_graph(x, b);
    Node n = op_node({x.id, k.id, b.id});
    n.owned = deconv2d_value(val(x.id), val(k.id), val(b.id), stride, pad, out_pad);
    int self = push(std::move(n));
    int xid = x.id, kid = k.id, bid = b.id;
    nodes_[static_cast<size_t>(self)].backprop = [this, self, xid, kid, bid, stride, pad]() {
        const Tensor& xv = val(xid);
        const Tensor& kv = val(kid);
        const Tensor& gout = grad_buf(self);
        const int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
        const int F = kv.dim(1), kh = kv.dim(2), kw = kv.dim(3);
        const int OH = gout.dim(2), OW = gout.dim(3);
        const bool need_x = nodes_[static_cast<size_t>(xid)].needs_grad;
        const bool need_k = nodes_[static_cast<size_t>(kid)].needs_grad;
        const bool need_b = nodes_[static_cast<size_t>(bid)].needs_grad;
        auto kmat = as_mat(kv, C, F * kh * kw);
        std::vector<double> gcols(static_cast<size_t>(F * kh * kw) * H * W);
        for (int nn = 0; nn < N; ++nn) {
            // grad wrt the (large) output image seen through conv geometry OH->H
            im2col(gout.ptr() + static_cast<size_t>(nn) * F * OH * OW, F, OH, OW, kh, kw, stride,
                   pad, gcols.data());
            ConstMatMap gcm(gcols.data(), F * kh * kw, H * W);
            if (need_x) {
                MatMap gxm(grad_buf(xid).ptr() + static_cast<size_t>(nn) * C * H * W, C, H * W);
                gxm.noalias() += kmat * gcm;
            }
            if (need_k) {
                ConstMatMap xm(xv.ptr() + static_cast<size_t>(nn) * C * H * W, C, H * W);
                as_mat(grad_buf(kid), C, F * kh * kw).noalias() += xm * gcm.transpose();
            }
            if (need_b) {
                Tensor& gb = grad_buf(bid);
                const double* gp = gout.ptr() + static_cast<size_t>(nn) * F * OH * OW;
                for (int f = 0; f < F; ++f) {
                    double acc = 0.0;
                    for (int i = 0; i < OH * OW; ++i) acc += gp[static_cast<size_t>(f) * OH * OW + i];
                    gb.data[static_cast<size_t>(f)] += acc;
                }
            }
        }
    };
    return {this, self};
}

void Graph::backward(Var loss) {
    if (loss.g != this) throw std::invalid_argument("backward: var from different graph");
    if (val(loss.id).size() != 1)
        throw std::invalid_argument("backward: loss must be scalar, got " +
                                    val(loss.id).shape_str());

    // Iterative DFS over needs_grad nodes; each visited exactly once.
    std::vector<int> topo;
    std::vector<uint8_t> state(nodes_.size(), 0);  // 0 new, 1 open, 2 done
    std::vector<int> stack{loss.id};
    while (!stack.empty()) {
        int u = stack.back();
        Node& nu = nodes_[static_cast<size_t>(u)];
        if (state[static_cast<size_t>(u)] == 0) {
            state[static_cast<size_t>(u)] = 1;
            for (int p : nu.parents)
                if (p >= 0 && nodes_[static_cast<size_t>(p)].needs_grad &&
                    state[static_cast<size_t>(p)] == 0)
                    stack.push_back(p);
        } else {
            stack.pop_back();
            if (state[static_cast<size_t>(u)] == 1) {
                state[static_cast<size_t>(u)] = 2;
                topo.push_back(u);
            }
        }
    }

    grad_buf(loss.id).data[0] = 1.0;
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
        Node& n = nodes_[static_cast<size_t>(*it)];
        if (n.backprop) n.backprop();
    }
}

}  // namespace confide::ad
