#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "steerlab/tensor.hpp"

namespace steerlab {

// Handle to a tensor recorded on a GradTape.
struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

// Reverse-mode tape over Tensor-valued primitives.  Usage: record leaves and
// operations during a forward computation, call backward() on a 1x1 result,
// then read grad() of any leaf created with needs_grad=true.
//
// Nodes are recorded in evaluation order, which is already a topological
// order, so backward() is a single reverse scan.  Operations whose inputs all
// have needs_grad=false record no backward closure, so gradient-free forward
// passes (e.g. measurement sweeps) pay only for value storage.
//
// A tape instance is single-threaded; create one per evaluation.
class GradTape {
  public:
    GradTape() = default;
    GradTape(const GradTape&) = delete;
    GradTape& operator=(const GradTape&) = delete;
    // Moves are safe: backward closures reference the tape via parameter, not
    // via captured this.
    GradTape(GradTape&&) = default;
    GradTape& operator=(GradTape&&) = default;

    // --- leaves ---
    Var leaf(Tensor value, bool needs_grad);

    // --- elementwise / linear ---
    Var add(Var a, Var b);                 // a + b
    Var sub(Var a, Var b);                 // a - b
    Var mul(Var a, Var b);                 // Hadamard product
    Var scale(Var a, double s);            // s * a
    Var relu(Var a);                       // max(0, x); gradient 0 at the kink

    // --- matrix products ---
    Var matmul(Var a, Var b);              // a:[m,k] * b:[k,n] -> [m,n]
    Var matmul_nt(Var a, Var b);           // a:[m,k] * b^T, b:[n,k] -> [m,n]

    // --- broadcasting / structure ---
    Var add_row(Var a, Var row);           // a:[m,n] + row:[1,n] broadcast over rows
    Var mask_rows(Var a, std::vector<size_t> keep);     // zero every row not listed
    Var rows(Var table, std::vector<size_t> ids);       // gather rows -> [ids.size(), cols]
    Var slice_cols(Var a, size_t c0, size_t c1);        // a[:, c0:c1)
    Var concat_cols(const std::vector<Var>& parts);     // horizontal concat

    // --- normalization / attention / reductions ---
    // Per-row layer norm over columns with learned gain/bias rows [1,n].
    Var layer_norm(Var a, Var gain, Var bias, double eps = 1e-5);
    // Row-wise softmax of a [T,T] score matrix restricted to j <= i; entries
    // above the diagonal are exactly zero.
    Var causal_softmax(Var scores);
    Var sum_all(Var a);                    // -> [1,1]
    // Sum over rows listed in `row_ids` of -log softmax(logits[row])[target].
    // logits:[T,V]; row_ids and targets have equal length.  Result [1,1].
    Var cross_entropy_sum(Var logits, std::vector<size_t> row_ids, std::vector<size_t> targets);

    // --- execution ---
    // Seeds d(out)/d(out)=1 (out must be 1x1) and propagates.  May be called
    // once per tape.
    void backward(Var out);

    const Tensor& val(Var v) const;
    // Gradient of the backward() output w.r.t. this node; zeros if the node
    // was never reached.  Only meaningful for nodes with needs_grad.
    const Tensor& grad(Var v) const;
    bool needs_grad(Var v) const;
    size_t size() const { return nodes_.size(); }

  private:
    struct Node {
        Tensor value;
        Tensor grad;  // allocated by backward() for needs_grad nodes
        bool needs_grad = false;
        std::function<void(GradTape&)> back;  // absent when no input needs grads
    };

    std::vector<Node> nodes_;
    bool backward_done_ = false;

    Node& node(Var v);
    const Node& node(Var v) const;
    Var push(Tensor value, bool needs_grad, std::function<void(GradTape&)> back);
    Tensor& grad_buf(int id) { return nodes_[static_cast<size_t>(id)].grad; }
};

}  // namespace steerlab
