#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "posediff/tensor.hpp"

namespace posediff {

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid for the tape's lifetime.
struct Var {
    Tape* tape = nullptr;
    int id = -1;

    const Tensor& value() const;
};

/// Reverse-mode gradient tape. Nodes are appended in evaluation order, so
/// the list is topologically sorted by construction and the backward pass
/// visits each node exactly once, in reverse. A tape is confined to one
/// evaluation context; independent evaluations use independent tapes.
class Tape {
  public:
    /// Backward callback: receives the adjoint of the node's output and
    /// accumulates into the adjoints of its inputs via accumulate().
    using Backward = std::function<void(Tape&, const Tensor& grad_out)>;

    /// Tracked input; gradients can be requested for it.
    Var leaf(Tensor value);
    /// Untracked value; no gradient flows into it.
    Var constant(Tensor value);

    /// Records a new node. Gradient tracking is inherited from the inputs.
    /// Every op checks its output for non-finite entries.
    Var make(const std::string& op, const std::vector<Var>& inputs, Tensor value,
             Backward backward);

    const Tensor& value(int id) const;
    const Tensor& value(Var v) const { return value(v.id); }
    bool requires_grad(int id) const;
    bool requires_grad(Var v) const { return requires_grad(v.id); }
    int size() const { return static_cast<int>(nodes_.size()); }

    /// Gradients of a scalar output with respect to the given leaves.
    /// Leaves not on any path to the output get zero gradients of their own
    /// shape. Throws if `output` is not a scalar.
    std::vector<Tensor> grad(Var output, std::span<const Var> wrt);
    Tensor grad_one(Var output, Var wrt);

    /// Only meaningful inside a Backward callback.
    void accumulate(int id, const Tensor& g);
    const Tensor* adjoint(int id) const;

  private:
    struct Node {
        std::string op;
        std::vector<int> inputs;
        Tensor value;
        Backward backward;
        bool needs_grad = false;
    };
    std::vector<Node> nodes_;
    std::vector<Tensor> adjoints_;       // parallel to nodes_ during a backward pass
    std::vector<char> adjoint_present_;
};

// ---- Operations -----------------------------------------------------------
//
// The op set is exactly what the noise-prediction network and the guidance
// residual need. Shapes follow two rules: no broadcasting except that a
// right-hand operand whose shape is a trailing suffix of the left's is
// repeated over the leading extents, and matmul accepts a rank-2 right-hand
// side shared across leading (batch) extents. Shape violations throw
// std::invalid_argument naming the op and both shapes.

Var add(Var a, Var b);                 // b's shape may be a suffix of a's
Var sub(Var a, Var b);                 // same shapes
Var scale(Var a, double s);
Var cmul(Var a, const Tensor& c);      // elementwise multiply by a constant, same shape

/// C = A @ B (or A @ B^T). A is [..., m, k]. B is either rank-2 (shared
/// across A's leading extents) or has identical leading extents.
Var matmul(Var a, Var b, bool transpose_b = false);

std::vector<Var> split_last(Var a, int parts);        // equal parts of the last axis
Var concat_last(const std::vector<Var>& parts);

Var softmax_last(Var a);

/// Normalizes over the last axis with denominator sqrt(variance + eps), then
/// applies the affine map gamma * xhat + beta. gamma/beta are rank-1 of the
/// last extent. A constant row normalizes to zeros (pre-affine).
Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);

Var gelu(Var a);                       // exact erf form

/// Gathers rows of a rank-2 table: out[i, :] = table[rows[i], :].
Var lookup_rows(Var table, const std::vector<int64_t>& rows);

/// Repeats a [B, D] tensor into [B, count, D].
Var tile_mid(Var a, int64_t count);

Var reduce_sum(Var a);                 // scalar
Var sum_squares(Var a);                // scalar
Var mean_square(Var a);                // scalar

// ---- Gradient checking ----------------------------------------------------

/// Max over coordinates of |analytic - central difference| / max(1, |analytic|).
/// `f` must be scalar-valued and evaluable at perturbed points; a non-finite
/// value throws. Independent of the tape: `f` is treated as a black box.
double finite_diff_check(const std::function<double(const Tensor&)>& f, const Tensor& point,
                         const Tensor& analytic_grad, double step);

}  // namespace posediff
