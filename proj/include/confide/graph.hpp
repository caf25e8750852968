#pragma once

#include <array>
#include <functional>
#include <vector>

#include "confide/tensor.hpp"

namespace confide::ad {

class Graph;

// Handle into a Graph. Cheap to copy; only valid while the graph lives.
struct Var {
    Graph* g = nullptr;
    int id = -1;
    bool valid() const { return g != nullptr && id >= 0; }
};

// Define-by-run reverse-mode graph. One graph per training batch; nodes store
// forward values eagerly, backward() walks the graph once in reverse
// topological order and accumulates gradients for every node that needs them.
//
// Parameters are referenced (not copied) via param(); their gradients are read
// back with grad() after backward().
class Graph {
  public:
    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    // ---- leaves ----
    Var constant(Tensor v);
    Var param(const Tensor& external);  // differentiable leaf, value not copied

    // ---- dense / activation ----
    Var linear(Var x, Var w, Var b);  // x:[B,n] w:[n,m] b:[m] -> [B,m]
    Var matmul(Var a, Var b);         // [p,q]x[q,r] -> [p,r]
    Var relu(Var x);

    // ---- elementwise ----
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    Var square(Var x);
    Var scale(Var x, double c);

    // broadcast against a 1-element node
    Var scale_by(Var x, Var s);
    Var add_scalar(Var x, Var s);
    Var sub_scalar(Var x, Var s);

    // ---- reductions / shaping ----
    Var mean(Var x);  // -> [1]
    Var sum(Var x);   // -> [1]
    Var reshape(Var x, std::vector<int> shape);
    Var concat_cols(Var a, Var b);        // [B,n]+[B,m] -> [B,n+m]
    Var slice_row(Var x, int row);        // [B,m] -> [1,m]
    Var slice_cols(Var x, int lo, int hi);
    Var row_broadcast_add(Var x, Var r);  // x:[P,m] + r:[1,m]
    Var col_broadcast_mul(Var x, Var s);  // x:[B,n] * s:[B,1], row-wise scale
    Var col_broadcast_add(Var x, Var s);  // x:[B,n] + s:[B,1]
    Var repeat_rows(Var x, int times);    // [B,d] -> [B*times,d], blockwise
    // x:[B*P,m] + r:[B,m]; row b*P+i gets r row b added
    Var block_broadcast_add(Var x, Var r, int block);

    // ---- convolution ----
    // x:[N,C,H,W], k:[F,C,kh,kw], b:[F]; standard cross-correlation.
    Var conv2d(Var x, Var k, Var b, int stride, int pad);
    // transposed convolution; k:[C,F,kh,kw]; out H = (H-1)*stride - 2*pad + kh + out_pad
    Var deconv2d(Var x, Var k, Var b, int stride, int pad, int out_pad);

    // ---- execution ----
    const Tensor& value(Var v) const;
    // Accumulated gradient of the last backward() for this node (zeros if the
    // node was unreachable from the loss).
    const Tensor& grad(Var v);
    void backward(Var loss);  // loss must be a single-element tensor

    size_t node_count() const { return nodes_.size(); }

  private:
    struct Node {
        Tensor owned;                    // forward value, unless external
        const Tensor* external = nullptr;
        Tensor grad;                     // allocated lazily during backward
        bool needs_grad = false;
        std::array<int, 3> parents{-1, -1, -1};
        std::function<void()> backprop;  // adds into parent grads
    };

    Node op_node(std::initializer_list<int> parents);
    int push(Node n);
    const Tensor& val(int id) const {
        const Node& n = nodes_[static_cast<size_t>(id)];
        return n.external ? *n.external : n.owned;
    }
    Tensor& grad_buf(int id);  // zero-initialised to value shape on first use
    void check_same_graph(Var a, Var b) const;

    std::vector<Node> nodes_;
    Tensor zero_scratch_;  // returned by grad() for grad-free nodes
};

// Value-mode convolution kernels (shared by the graph ops and raw inference).
Tensor conv2d_value(const Tensor& x, const Tensor& k, const Tensor& b, int stride, int pad);
Tensor deconv2d_value(const Tensor& x, const Tensor& k, const Tensor& b, int stride, int pad,
                      int out_pad);

}  // namespace confide::ad
