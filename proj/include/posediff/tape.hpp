#pragma once

#include <functional>
#include <vector>

#include "posediff/tensor.hpp"

namespace posediff {

// Handle into a Tape.  Cheap to copy; only meaningful for the tape that
// produced it.
struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

// Reverse-mode automatic differentiation over whole tensors.  Ops append
// nodes in evaluation order; backward() walks the list in reverse, so the
// creation order is already a topological order.  Every op validates shapes
// (ShapeError) and scans its output for NaN/Inf (NumericError naming the
// primitive).  Gradients of non-differentiable leaves (constant()) are never
// materialized.
class Tape {
  public:
    struct Node {
        Tensor value;
        Tensor grad;
        std::vector<int> parents;
        std::function<void(Tape&, const Node&)> backward_fn;
        const char* op = "leaf";
        bool requires_grad = false;
    };

    // --- leaves -----------------------------------------------------------
    Var input(Tensor value);     // differentiable
    Var constant(Tensor value);  // non-differentiable

    // --- elementwise ------------------------------------------------------
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    Var div(Var a, Var b);
    Var scale(Var a, double s);
    Var add_scalar(Var a, double c);
    Var gelu(Var a);        // exact erf form
    Var exp(Var a);
    Var sqrt(Var a);        // requires strictly positive input
    Var clamp(Var a, double lo, double hi);  // straight-through inside, zero outside
    Var atan2(Var y, Var x);                 // elementwise, same shapes

    // --- linear algebra ----------------------------------------------------
    Var matmul(Var a, Var b);     // (r,k) @ (k,c)
    Var matmul_nt(Var a, Var b);  // (r,k) @ (c,k)^T

    // --- broadcasts over rows ----------------------------------------------
    Var add_row(Var m, Var v);   // m(r,c) + v(c) to every row
    Var mul_rows(Var m, Var v);  // row i scaled by v(i)
    Var div_rows(Var m, Var v);  // row i divided by v(i); v must be nonzero
    Var repeat_row(Var v, int n);  // v(c) -> (n,c)

    // --- reductions ---------------------------------------------------------
    Var sum(Var a);       // scalar
    Var row_sums(Var m);  // (r,c) -> (r)
    Var col_mean(Var m);  // (r,c) -> (c)

    // --- normalization / attention ------------------------------------------
    Var softmax_rows(Var m);
    Var layer_norm_rows(Var m, Var gain, Var bias);  // eps 1e-5

    // --- shape surgery --------------------------------------------------------
    Var slice_rows(Var m, int r0, int r1);  // rows [r0, r1)
    Var slice_cols(Var m, int c0, int c1);
    Var concat_rows(const std::vector<Var>& parts);
    Var concat_cols(const std::vector<Var>& parts);
    Var reshape(Var a, std::vector<int> shape);
    Var gather_rows(Var m, std::vector<int> rows);  // repeated rows allowed

    // --- geometry ----------------------------------------------------------
    Var cross3_rows(Var a, Var b);  // rowwise cross product, (r,3)

    // --- access -------------------------------------------------------------
    const Tensor& value(Var v) const;
    // Gradient of the last backward() target w.r.t. v.  Only meaningful for
    // nodes with requires_grad.
    const Tensor& grad(Var v) const;
    int node_count() const { return static_cast<int>(nodes_.size()); }

    // Backpropagate from a scalar output.
    void backward(Var output);

    Tensor& grad_mut(int id) { return nodes_[static_cast<size_t>(id)].grad; }
    const Node& node(int id) const { return nodes_[static_cast<size_t>(id)]; }

  private:
    Var push(Node node);
    const Node& check(Var v, const char* who) const;

    std::vector<Node> nodes_;
};

// Runs `f` on a fresh tape with the given tensors as differentiable inputs,
// backpropagates from its scalar result and returns the value together with
// the gradient w.r.t. every input.
struct GradResult {
    double value = 0.0;
    std::vector<Tensor> gradients;
};
using TapeFn = std::function<Var(Tape&, const std::vector<Var>&)>;
GradResult evaluate_with_gradients(const TapeFn& f, const std::vector<Tensor>& inputs);

// Central-difference gradient of a scalar function, the reference oracle for
// the tape.  Coordinate i is probed with step eps*(1+|x_i|).
Tensor finite_difference_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x, double eps = 1e-5);

}  // namespace posediff
