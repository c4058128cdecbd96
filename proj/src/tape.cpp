#include "posediff/tape.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <string>

#include "posediff/errors.hpp"

namespace posediff {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using CMatMap = Eigen::Map<const RowMat>;

MatMap map2(Tensor& t) { return MatMap(t.data(), t.rows(), t.cols()); }
CMatMap cmap2(const Tensor& t) { return CMatMap(t.data(), t.rows(), t.cols()); }

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b))
        throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
}

void require_matrix(const Tensor& t, const char* op) {
    if (t.rank() != 2) throw ShapeError(std::string(op) + ": expected a matrix, got shape " + t.shape_str());
}

void require_vector(const Tensor& t, const char* op) {
    if (t.rank() != 1) throw ShapeError(std::string(op) + ": expected a vector, got shape " + t.shape_str());
}

}  // namespace

Var Tape::push(Node node) {
    if (!node.value.all_finite()) throw NumericError(std::string(node.op) + ": non-finite output");
    nodes_.push_back(std::move(node));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

const Tape::Node& Tape::check(Var v, const char* who) const {
    if (v.id < 0 || v.id >= static_cast<int>(nodes_.size()))
        throw ValidationError(std::string(who) + ": invalid tape handle");
    return nodes_[static_cast<size_t>(v.id)];
}

Var Tape::input(Tensor value) {
    Node n;
    n.value = std::move(value);
    n.op = "input";
    n.requires_grad = true;
    return push(std::move(n));
}

Var Tape::constant(Tensor value) {
    Node n;
    n.value = std::move(value);
    n.op = "constant";
    n.requires_grad = false;
    return push(std::move(n));
}

const Tensor& Tape::value(Var v) const { return check(v, "value").value; }

const Tensor& Tape::grad(Var v) const {
    const Node& n = check(v, "grad");
    if (!n.requires_grad) throw ValidationError("grad: node does not require gradients");
    if (n.grad.size() == 0) throw ValidationError("grad: backward() has not been run over this node");
    return n.grad;
}

void Tape::backward(Var output) {
    const Node& out = check(output, "backward");
    if (out.value.size() != 1) throw ShapeError("backward: target must be a scalar, got shape " + out.value.shape_str());
    if (!out.requires_grad) throw ValidationError("backward: target does not depend on any differentiable input");

    for (int id = 0; id <= output.id; ++id) {
        Node& n = nodes_[static_cast<size_t>(id)];
        if (n.requires_grad)
            n.grad = Tensor::zeros(n.value.shape());
        else
            n.grad = Tensor();
    }
    nodes_[static_cast<size_t>(output.id)].grad[0] = 1.0;

    for (int id = output.id; id >= 0; --id) {
        const Node& n = nodes_[static_cast<size_t>(id)];
        if (!n.requires_grad || !n.backward_fn) continue;
        n.backward_fn(*this, n);
        for (int pid : n.parents) {
            const Node& p = nodes_[static_cast<size_t>(pid)];
            if (p.requires_grad && !p.grad.all_finite())
                throw NumericError(std::string(n.op) + ": non-finite gradient");
        }
    }
}

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

Var Tape::add(Var a, Var b) {
    const Node &na = check(a, "add"), &nb = check(b, "add");
    require_same_shape(na.value, nb.value, "add");
    Node n;
    n.op = "add";
    n.parents = {a.id, b.id};
    n.requires_grad = na.requires_grad || nb.requires_grad;
    n.value = na.value;
    for (std::int64_t i = 0; i < n.value.size(); ++i) n.value[i] += nb.value[i];
    n.backward_fn = [a, b](Tape& t, const Node& self) {
        for (int pid : {a.id, b.id}) {
            if (!t.node(pid).requires_grad) continue;
            Tensor& g = t.grad_mut(pid);
            for (std::int64_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
    };
    return push(std::move(n));
}

Var Tape::sub(Var a, Var b) {
    const Node &na = check(a, "sub"), &nb = check(b, "sub");
    require_same_shape(na.value, nb.value, "sub");
    Node n;
    n.op = "sub";
    n.parents = {a.id, b.id};
    n.requires_grad = na.requires_grad || nb.requires_grad;
    n.value = na.value;
    for (std::int64_t i = 0; i < n.value.size(); ++i) n.value[i] -= nb.value[i];
    n.backward_fn = [a, b](Tape& t, const Node& self) {
        if (t.node(a.id).requires_grad) {
            Tensor& ga = t.grad_mut(a.id);
            for (std::int64_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i];
        }
        if (t.node(b.id).requires_grad) {
            Tensor& gb = t.grad_mut(b.id);
            for (std::int64_t i = 0; i < gb.size(); ++i) gb[i] -= self.grad[i];
        }
    };
    return push(std::move(n));
}

Var Tape::mul(Var a, Var b) {
    const Node &na = check(a, "mul"), &nb = check(b, "mul");
    require_same_shape(na.value, nb.value, "mul");
    Node n;
    n.op = "mul";
    n.parents = {a.id, b.id};
    n.requires_grad = na.requires_grad || nb.requires_grad;
    n.value = na.value;
    for (std::int64_t i = 0; i < n.value.size(); ++i) n.value[i] *= nb.value[i];
    n.backward_fn = [a, b](Tape& t, const Node& self) {
        const Tensor &va = t.node(a.id).value, &vb = t.node(b.id).value;
        if (t.node(a.id).requires_grad) {
            Tensor& ga = t.grad_mut(a.id);
            for (std::int64_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i] * vb[i];
        }
        if (t.node(b.id).requires_grad) {
            Tensor& gb = t.grad_mut(b.id);
            for (std::int64_t i = 0; i < gb.size(); ++i) gb[i] += self.grad[i] * va[i];
        }
    };
    return push(std::move(n));
}

Var Tape::div(Var a, Var b) {
    const Node &na = check(a, "div"), &nb = check(b, "div");
    require_same_shape(na.value, nb.value, "div");
    Node n;
    n.op = "div";
    n.parents = {a.id, b.id};
    n.requires_grad = na.requires_grad || nb.requires_grad;
    n.value = na.value;
    for (std::int64_t i = 0; i < n.value.size(); ++i) n.value[i] /= nb.value[i];
    n.backward_fn = [a, b](Tape& t, const Node& self) {
        const Tensor &va = t.node(a.id).value, &vb = t.node(b.id).value;
        if (t.node(a.id).requires_grad) {
            Tensor& ga = t.grad_mut(a.id);
            for (std::int64_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i] / vb[i];
        }
        if (t.node(b.id).requires_grad) {
            Tensor& gb = t.grad_mut(b.id);
            for (std::int64_t i = 0; i < gb.size(); ++i) gb[i] -= self.grad[i] * va[i] / (vb[i] * vb[i]);
        }
    };
    return push(std::move(n));
}

Var Tape::scale(Var a, double s) {
    const Node& na = check(a, "scale");
    Node n;
    n.op = "scale";
    n.parents = {a.id};
    n.requires_grad = na.requires_grad;
    n.value = na.value;
    for (std::int64_t i = 0; i < n.value.size(); ++i) n.value[i] *= s;
    n.backward_fn = [a, s](Tape& t, const Node& self) {
        Tensor& ga = t.grad_mut(a.id);
        for (std::int64_t i = 0; i < ga.size(); ++i) ga[i] += s * self.grad[i];
    };
    return push(std::move(n));
}

Var Tape::add_scalar(Var a, double c) {
    const Node& na = check(a, "add_scalar");
    Node n;
    n.op = "add_scalar";
    n.parents = {a.id};
    n.requires_grad = na.requires_grad;
    n.value = na.value;
    for (std::int64_t i = 0; i < n.value.size(); ++i) n.value[i] += c;
    n.backward_fn = [a](Tape& t, const Node& self) {
        Tensor& ga = t.grad_mut(a.id);
        for (std::int64_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i];
    };
    return push(std::move(n));
}

Var Tape::gelu(Var a) {
    const Node& na = check(a, "gelu");
    Node n;
    n.op = "gelu";
    n.parents = {a.id};
    n.requires_grad = na.requires_grad;
    n.value = na.value;
    for (std::int64_t i = 0; i < n.value.size(); ++i) {
        const double x = n.value[i];
        n.value[i] = 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2));
    }
    n.backward_fn = [a](Tape& t, const Node& self) {
        const Tensor& va = t.node(a.id).value;
        Tensor& ga = t.grad_mut(a.id);
        constexpr double kInvSqrt2Pi = 0.3989422804014327;
        for (std::int64_t i = 0; i < ga.size(); ++i) {
            const double x = va[i];
            const double cdf = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
            const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
            ga[i] += self.grad[i] * (cdf + x * pdf);
        }
    };
    return push(std::move(n));
}

Var Tape::exp(Var a) {
    const Node& na = check(a, "exp");
    Node n;
    n.op = "exp";
    n.parents = {a.id};
    n.requires_grad = na.requires_grad;
    n.value = na.value;
    for (std::int64_t i = 0; i < n.value.size(); ++i) n.value[i] = std::exp(n.value[i]);
    n.backward_fn = [a](Tape& t, const Node& self) {
        Tensor& ga = t.grad_mut(a.id);
        for (std::int64_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i] * self.value[i];
    };
    return push(std::move(n));
}

Var Tape::sqrt(Var a) {
    const Node& na = check(a, "sqrt");
    Node n;
    n.op = "sqrt";
    n.parents = {a.id};
    n.requires_grad = na.requires_grad;
    n.value = na.value;
    for (std::int64_t i = 0; i < n.value.size(); ++i) n.value[i] = std::sqrt(n.value[i]);
    n.backward_fn = [a](Tape& t, const Node& self) {
        Tensor& ga = t.grad_mut(a.id);
        for (std::int64_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i] * 0.5 / self.value[i];
    };
    return push(std::move(n));
}

Var Tape::clamp(Var a, double lo, double hi) {
    if (!(lo < hi)) throw ValidationError("clamp: lo must be < hi");
    const Node& na = check(a, "clamp");
    Node n;
    n.op = "clamp";
    n.parents = {a.id};
    n.requires_grad = na.requires_grad;
    n.value = na.value;
    for (std::int64_t i = 0; i < n.value.size(); ++i) n.value[i] = std::min(std::max(n.value[i], lo), hi);
    n.backward_fn = [a, lo, hi](Tape& t, const Node& self) {
        const Tensor& va = t.node(a.id).value;
        Tensor& ga = t.grad_mut(a.id);
        for (std::int64_t i = 0; i < ga.size(); ++i)
            if (va[i] > lo && va[i] < hi) ga[i] += self.grad[i];
    };
    return push(std::move(n));
}

Var Tape::atan2(Var y, Var x) {
    const Node &ny = check(y, "atan2"), &nx = check(x, "atan2");
    require_same_shape(ny.value, nx.value, "atan2");
    Node n;
    n.op = "atan2";
    n.parents = {y.id, x.id};
    n.requires_grad = ny.requires_grad || nx.requires_grad;
    n.value = ny.value;
    for (std::int64_t i = 0; i < n.value.size(); ++i) n.value[i] = std::atan2(ny.value[i], nx.value[i]);
    n.backward_fn = [y, x](Tape& t, const Node& self) {
        const Tensor &vy = t.node(y.id).value, &vx = t.node(x.id).value;
        for (std::int64_t i = 0; i < self.grad.size(); ++i) {
            const double r2 = vx[i] * vx[i] + vy[i] * vy[i];
            if (t.node(y.id).requires_grad) t.grad_mut(y.id)[i] += self.grad[i] * vx[i] / r2;
            if (t.node(x.id).requires_grad) t.grad_mut(x.id)[i] -= self.grad[i] * vy[i] / r2;
        }
    };
    return push(std::move(n));
}

// ---------------------------------------------------------------------------
// linear algebra
// ---------------------------------------------------------------------------

Var Tape::matmul(Var a, Var b) {
    const Node &na = check(a, "matmul"), &nb = check(b, "matmul");
    require_matrix(na.value, "matmul");
    require_matrix(nb.value, "matmul");
    if (na.value.cols() != nb.value.rows())
        throw ShapeError("matmul: inner dims disagree " + na.value.shape_str() + " @ " + nb.value.shape_str());
    Node n;
    n.op = "matmul";
    n.parents = {a.id, b.id};
    n.requires_grad = na.requires_grad || nb.requires_grad;
    n.value = Tensor({na.value.rows(), nb.value.cols()});
    map2(n.value).noalias() = cmap2(na.value) * cmap2(nb.value);
    n.backward_fn = [a, b](Tape& t, const Node& self) {
        const Tensor &va = t.node(a.id).value, &vb = t.node(b.id).value;
        if (t.node(a.id).requires_grad) map2(t.grad_mut(a.id)).noalias() += cmap2(self.grad) * cmap2(vb).transpose();
        if (t.node(b.id).requires_grad) map2(t.grad_mut(b.id)).noalias() += cmap2(va).transpose() * cmap2(self.grad);
    };
    return push(std::move(n));
}

Var Tape::matmul_nt(Var a, Var b) {
    const Node &na = check(a, "matmul_nt"), &nb = check(b, "matmul_nt");
    require_matrix(na.value, "matmul_nt");
    require_matrix(nb.value, "matmul_nt");
    if (na.value.cols() != nb.value.cols())
        throw ShapeError("matmul_nt: inner dims disagree " + na.value.shape_str() + " @ " + nb.value.shape_str() + "^T");
    Node n;
    n.op = "matmul_nt";
    n.parents = {a.id, b.id};
    n.requires_grad = na.requires_grad || nb.requires_grad;
    n.value = Tensor({na.value.rows(), nb.value.rows()});
    map2(n.value).noalias() = cmap2(na.value) * cmap2(nb.value).transpose();
    n.backward_fn = [a, b](Tape& t, const Node& self) {
        const Tensor &va = t.node(a.id).value, &vb = t.node(b.id).value;
        if (t.node(a.id).requires_grad) map2(t.grad_mut(a.id)).noalias() += cmap2(self.grad) * cmap2(vb);
        if (t.node(b.id).requires_grad) map2(t.grad_mut(b.id)).noalias() += cmap2(self.grad).transpose() * cmap2(va);
    };
    return push(std::move(n));
}

// ---------------------------------------------------------------------------
// row broadcasts
// ---------------------------------------------------------------------------

Var Tape::add_row(Var m, Var v) {
    const Node &nm = check(m, "add_row"), &nv = check(v, "add_row");
    require_matrix(nm.value, "add_row");
    require_vector(nv.value, "add_row");
    if (nm.value.cols() != nv.value.dim(0))
        throw ShapeError("add_row: " + nm.value.shape_str() + " + " + nv.value.shape_str());
    Node n;
    n.op = "add_row";
    n.parents = {m.id, v.id};
    n.requires_grad = nm.requires_grad || nv.requires_grad;
    n.value = nm.value;
    const int r = nm.value.rows(), c = nm.value.cols();
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) n.value.at(i, j) += nv.value[j];
    n.backward_fn = [m, v, r, c](Tape& t, const Node& self) {
        if (t.node(m.id).requires_grad) {
            Tensor& gm = t.grad_mut(m.id);
            for (std::int64_t i = 0; i < gm.size(); ++i) gm[i] += self.grad[i];
        }
        if (t.node(v.id).requires_grad) {
            Tensor& gv = t.grad_mut(v.id);
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < c; ++j) gv[j] += self.grad.at(i, j);
        }
    };
    return push(std::move(n));
}

Var Tape::mul_rows(Var m, Var v) {
    const Node &nm = check(m, "mul_rows"), &nv = check(v, "mul_rows");
    require_matrix(nm.value, "mul_rows");
    require_vector(nv.value, "mul_rows");
    if (nm.value.rows() != nv.value.dim(0))
        throw ShapeError("mul_rows: " + nm.value.shape_str() + " * " + nv.value.shape_str());
    Node n;
    n.op = "mul_rows";
    n.parents = {m.id, v.id};
    n.requires_grad = nm.requires_grad || nv.requires_grad;
    n.value = nm.value;
    const int r = nm.value.rows(), c = nm.value.cols();
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) n.value.at(i, j) *= nv.value[i];
    n.backward_fn = [m, v, r, c](Tape& t, const Node& self) {
        const Tensor &vm = t.node(m.id).value, &vv = t.node(v.id).value;
        if (t.node(m.id).requires_grad) {
            Tensor& gm = t.grad_mut(m.id);
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < c; ++j) gm.at(i, j) += self.grad.at(i, j) * vv[i];
        }
        if (t.node(v.id).requires_grad) {
            Tensor& gv = t.grad_mut(v.id);
            for (int i = 0; i < r; ++i) {
                double acc = 0.0;
                for (int j = 0; j < c; ++j) acc += self.grad.at(i, j) * vm.at(i, j);
                gv[i] += acc;
            }
        }
    };
    return push(std::move(n));
}

Var Tape::div_rows(Var m, Var v) {
    const Node &nm = check(m, "div_rows"), &nv = check(v, "div_rows");
    require_matrix(nm.value, "div_rows");
    require_vector(nv.value, "div_rows");
    if (nm.value.rows() != nv.value.dim(0))
        throw ShapeError("div_rows: " + nm.value.shape_str() + " / " + nv.value.shape_str());
    Node n;
    n.op = "div_rows";
    n.parents = {m.id, v.id};
    n.requires_grad = nm.requires_grad || nv.requires_grad;
    n.value = nm.value;
    const int r = nm.value.rows(), c = nm.value.cols();
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) n.value.at(i, j) /= nv.value[i];
    n.backward_fn = [m, v, r, c](Tape& t, const Node& self) {
        const Tensor &vm = t.node(m.id).value, &vv = t.node(v.id).value;
        if (t.node(m.id).requires_grad) {
            Tensor& gm = t.grad_mut(m.id);
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < c; ++j) gm.at(i, j) += self.grad.at(i, j) / vv[i];
        }
        if (t.node(v.id).requires_grad) {
            Tensor& gv = t.grad_mut(v.id);
            for (int i = 0; i < r; ++i) {
                double acc = 0.0;
                for (int j = 0; j < c; ++j) acc += self.grad.at(i, j) * vm.at(i, j);
                gv[i] -= acc / (vv[i] * vv[i]);
            }
        }
    };
    return push(std::move(n));
}

Var Tape::repeat_row(Var v, int nrows) {
    const Node& nv = check(v, "repeat_row");
    require_vector(nv.value, "repeat_row");
    if (nrows <= 0) throw ShapeError("repeat_row: row count must be positive");
    const int c = nv.value.dim(0);
    Node n;
    n.op = "repeat_row";
    n.parents = {v.id};
    n.requires_grad = nv.requires_grad;
    n.value = Tensor({nrows, c});
    for (int i = 0; i < nrows; ++i)
        for (int j = 0; j < c; ++j) n.value.at(i, j) = nv.value[j];
    n.backward_fn = [v, nrows, c](Tape& t, const Node& self) {
        Tensor& gv = t.grad_mut(v.id);
        for (int i = 0; i < nrows; ++i)
            for (int j = 0; j < c; ++j) gv[j] += self.grad.at(i, j);
    };
    return push(std::move(n));
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

Var Tape::sum(Var a) {
    const Node& na = check(a, "sum");
    Node n;
    n.op = "sum";
    n.parents = {a.id};
    n.requires_grad = na.requires_grad;
    double acc = 0.0;
    for (std::int64_t i = 0; i < na.value.size(); ++i) acc += na.value[i];
    n.value = Tensor::scalar(acc);
    n.backward_fn = [a](Tape& t, const Node& self) {
        Tensor& ga = t.grad_mut(a.id);
        for (std::int64_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[0];
    };
    return push(std::move(n));
}

Var Tape::row_sums(Var m) {
    const Node& nm = check(m, "row_sums");
    require_matrix(nm.value, "row_sums");
    const int r = nm.value.rows(), c = nm.value.cols();
    Node n;
    n.op = "row_sums";
    n.parents = {m.id};
    n.requires_grad = nm.requires_grad;
    n.value = Tensor({r});
    for (int i = 0; i < r; ++i) {
        double acc = 0.0;
        for (int j = 0; j < c; ++j) acc += nm.value.at(i, j);
        n.value[i] = acc;
    }
    n.backward_fn = [m, r, c](Tape& t, const Node& self) {
        Tensor& gm = t.grad_mut(m.id);
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < c; ++j) gm.at(i, j) += self.grad[i];
    };
    return push(std::move(n));
}

Var Tape::col_mean(Var m) {
    const Node& nm = check(m, "col_mean");
    require_matrix(nm.value, "col_mean");
    const int r = nm.value.rows(), c = nm.value.cols();
    if (r == 0) throw ShapeError("col_mean: empty matrix");
    Node n;
    n.op = "col_mean";
    n.parents = {m.id};
    n.requires_grad = nm.requires_grad;
    n.value = Tensor({c});
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) n.value[j] += nm.value.at(i, j) / r;
    n.backward_fn = [m, r, c](Tape& t, const Node& self) {
        Tensor& gm = t.grad_mut(m.id);
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < c; ++j) gm.at(i, j) += self.grad[j] / r;
    };
    return push(std::move(n));
}

// ---------------------------------------------------------------------------
// normalization / attention
// ---------------------------------------------------------------------------

Var Tape::softmax_rows(Var m) {
    const Node& nm = check(m, "softmax_rows");
    require_matrix(nm.value, "softmax_rows");
    const int r = nm.value.rows(), c = nm.value.cols();
    Node n;
    n.op = "softmax_rows";
    n.parents = {m.id};
    n.requires_grad = nm.requires_grad;
    n.value = nm.value;
    for (int i = 0; i < r; ++i) {
        double mx = n.value.at(i, 0);
        for (int j = 1; j < c; ++j) mx = std::max(mx, n.value.at(i, j));
        double z = 0.0;
        for (int j = 0; j < c; ++j) {
            const double e = std::exp(n.value.at(i, j) - mx);
            n.value.at(i, j) = e;
            z += e;
        }
        for (int j = 0; j < c; ++j) n.value.at(i, j) /= z;
    }
    n.backward_fn = [m, r, c](Tape& t, const Node& self) {
        Tensor& gm = t.grad_mut(m.id);
        for (int i = 0; i < r; ++i) {
            double dot = 0.0;
            for (int j = 0; j < c; ++j) dot += self.grad.at(i, j) * self.value.at(i, j);
            for (int j = 0; j < c; ++j) gm.at(i, j) += (self.grad.at(i, j) - dot) * self.value.at(i, j);
        }
    };
    return push(std::move(n));
}

Var Tape::layer_norm_rows(Var m, Var gain, Var bias) {
    const Node &nm = check(m, "layer_norm_rows"), &ng = check(gain, "layer_norm_rows"), &nb = check(bias, "layer_norm_rows");
    require_matrix(nm.value, "layer_norm_rows");
    require_vector(ng.value, "layer_norm_rows");
    require_vector(nb.value, "layer_norm_rows");
    const int r = nm.value.rows(), c = nm.value.cols();
    if (ng.value.dim(0) != c || nb.value.dim(0) != c)
        throw ShapeError("layer_norm_rows: gain/bias length must match columns");
    constexpr double kEps = 1e-5;

    Tensor xhat({r, c});
    Tensor inv_std({r});
    Node n;
    n.op = "layer_norm_rows";
    n.parents = {m.id, gain.id, bias.id};
    n.requires_grad = nm.requires_grad || ng.requires_grad || nb.requires_grad;
    n.value = Tensor({r, c});
    for (int i = 0; i < r; ++i) {
        double mu = 0.0;
        for (int j = 0; j < c; ++j) mu += nm.value.at(i, j);
        mu /= c;
        double var = 0.0;
        for (int j = 0; j < c; ++j) {
            const double d = nm.value.at(i, j) - mu;
            var += d * d;
        }
        var /= c;
        const double is = 1.0 / std::sqrt(var + kEps);
        inv_std[i] = is;
        for (int j = 0; j < c; ++j) {
            const double xh = (nm.value.at(i, j) - mu) * is;
            xhat.at(i, j) = xh;
            n.value.at(i, j) = ng.value[j] * xh + nb.value[j];
        }
    }
    n.backward_fn = [m, gain, bias, r, c, xhat, inv_std](Tape& t, const Node& self) {
        const Tensor& vg = t.node(gain.id).value;
        if (t.node(m.id).requires_grad) {
            Tensor& gm = t.grad_mut(m.id);
            for (int i = 0; i < r; ++i) {
                double mean_gd = 0.0, mean_gdx = 0.0;
                for (int j = 0; j < c; ++j) {
                    const double gd = self.grad.at(i, j) * vg[j];
                    mean_gd += gd;
                    mean_gdx += gd * xhat.at(i, j);
                }
                mean_gd /= c;
                mean_gdx /= c;
                for (int j = 0; j < c; ++j) {
                    const double gd = self.grad.at(i, j) * vg[j];
                    gm.at(i, j) += inv_std[i] * (gd - mean_gd - xhat.at(i, j) * mean_gdx);
                }
            }
        }
        if (t.node(gain.id).requires_grad) {
            Tensor& gg = t.grad_mut(gain.id);
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < c; ++j) gg[j] += self.grad.at(i, j) * xhat.at(i, j);
        }
        if (t.node(bias.id).requires_grad) {
            Tensor& gb = t.grad_mut(bias.id);
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < c; ++j) gb[j] += self.grad.at(i, j);
        }
    };
    return push(std::move(n));
}

// ---------------------------------------------------------------------------
// shape surgery
// ---------------------------------------------------------------------------

Var Tape::slice_rows(Var m, int r0, int r1) {
    const Node& nm = check(m, "slice_rows");
    require_matrix(nm.value, "slice_rows");
    const int r = nm.value.rows(), c = nm.value.cols();
    if (r0 < 0 || r1 > r || r0 >= r1) throw ShapeError("slice_rows: bad range");
    Node n;
    n.op = "slice_rows";
    n.parents = {m.id};
    n.requires_grad = nm.requires_grad;
    n.value = Tensor({r1 - r0, c});
    for (int i = r0; i < r1; ++i)
        for (int j = 0; j < c; ++j) n.value.at(i - r0, j) = nm.value.at(i, j);
    n.backward_fn = [m, r0, r1, c](Tape& t, const Node& self) {
        Tensor& gm = t.grad_mut(m.id);
        for (int i = r0; i < r1; ++i)
            for (int j = 0; j < c; ++j) gm.at(i, j) += self.grad.at(i - r0, j);
    };
    return push(std::move(n));
}

Var Tape::slice_cols(Var m, int c0, int c1) {
    const Node& nm = check(m, "slice_cols");
    require_matrix(nm.value, "slice_cols");
    const int r = nm.value.rows(), c = nm.value.cols();
    if (c0 < 0 || c1 > c || c0 >= c1) throw ShapeError("slice_cols: bad range");
    Node n;
    n.op = "slice_cols";
    n.parents = {m.id};
    n.requires_grad = nm.requires_grad;
    n.value = Tensor({r, c1 - c0});
    for (int i = 0; i < r; ++i)
        for (int j = c0; j < c1; ++j) n.value.at(i, j - c0) = nm.value.at(i, j);
    n.backward_fn = [m, c0, c1, r](Tape& t, const Node& self) {
        Tensor& gm = t.grad_mut(m.id);
        for (int i = 0; i < r; ++i)
            for (int j = c0; j < c1; ++j) gm.at(i, j) += self.grad.at(i, j - c0);
    };
    return push(std::move(n));
}

Var Tape::concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw ShapeError("concat_rows: no parts");
    int rows = 0, cols = -1;
    bool rg = false;
    for (Var p : parts) {
        const Node& np = check(p, "concat_rows");
        require_matrix(np.value, "concat_rows");
        if (cols < 0) cols = np.value.cols();
        if (np.value.cols() != cols) throw ShapeError("concat_rows: column mismatch");
        rows += np.value.rows();
        rg = rg || np.requires_grad;
    }
    Node n;
    n.op = "concat_rows";
    n.requires_grad = rg;
    for (Var p : parts) n.parents.push_back(p.id);
    n.value = Tensor({rows, cols});
    int off = 0;
    for (Var p : parts) {
        const Tensor& v = nodes_[static_cast<size_t>(p.id)].value;
        for (int i = 0; i < v.rows(); ++i)
            for (int j = 0; j < cols; ++j) n.value.at(off + i, j) = v.at(i, j);
        off += v.rows();
    }
    auto ids = n.parents;
    n.backward_fn = [ids, cols](Tape& t, const Node& self) {
        int off = 0;
        for (int pid : ids) {
            const int pr = t.node(pid).value.rows();
            if (t.node(pid).requires_grad) {
                Tensor& gp = t.grad_mut(pid);
                for (int i = 0; i < pr; ++i)
                    for (int j = 0; j < cols; ++j) gp.at(i, j) += self.grad.at(off + i, j);
            }
            off += pr;
        }
    };
    return push(std::move(n));
}

Var Tape::concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no parts");
    int cols = 0, rows = -1;
    bool rg = false;
    for (Var p : parts) {
        const Node& np = check(p, "concat_cols");
        require_matrix(np.value, "concat_cols");
        if (rows < 0) rows = np.value.rows();
        if (np.value.rows() != rows) throw ShapeError("concat_cols: row mismatch");
        cols += np.value.cols();
        rg = rg || np.requires_grad;
    }
    Node n;
    n.op = "concat_cols";
    n.requires_grad = rg;
    for (Var p : parts) n.parents.push_back(p.id);
    n.value = Tensor({rows, cols});
    int off = 0;
    for (Var p : parts) {
        const Tensor& v = nodes_[static_cast<size_t>(p.id)].value;
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < v.cols(); ++j) n.value.at(i, off + j) = v.at(i, j);
        off += v.cols();
    }
    auto ids = n.parents;
    n.backward_fn = [ids, rows](Tape& t, const Node& self) {
        int off = 0;
        for (int pid : ids) {
            const int pc = t.node(pid).value.cols();
            if (t.node(pid).requires_grad) {
                Tensor& gp = t.grad_mut(pid);
                for (int i = 0; i < rows; ++i)
                    for (int j = 0; j < pc; ++j) gp.at(i, j) += self.grad.at(i, off + j);
            }
            off += pc;
        }
    };
    return push(std::move(n));
}

Var Tape::reshape(Var a, std::vector<int> shape) {
    const Node& na = check(a, "reshape");
    Tensor out(shape);
    if (out.size() != na.value.size())
        throw ShapeError("reshape: size mismatch " + na.value.shape_str() + " -> " + out.shape_str());
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] = na.value[i];
    Node n;
    n.op = "reshape";
    n.parents = {a.id};
    n.requires_grad = na.requires_grad;
    n.value = std::move(out);
    n.backward_fn = [a](Tape& t, const Node& self) {
        Tensor& ga = t.grad_mut(a.id);
        for (std::int64_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i];
    };
    return push(std::move(n));
}

Var Tape::gather_rows(Var m, std::vector<int> rows) {
    const Node& nm = check(m, "gather_rows");
    require_matrix(nm.value, "gather_rows");
    const int r = nm.value.rows(), c = nm.value.cols();
    for (int idx : rows)
        if (idx < 0 || idx >= r) throw ShapeError("gather_rows: index out of range");
    Node n;
    n.op = "gather_rows";
    n.parents = {m.id};
    n.requires_grad = nm.requires_grad;
    n.value = Tensor({static_cast<int>(rows.size()), c});
    for (size_t k = 0; k < rows.size(); ++k)
        for (int j = 0; j < c; ++j) n.value.at(static_cast<int>(k), j) = nm.value.at(rows[k], j);
    n.backward_fn = [m, rows, c](Tape& t, const Node& self) {
        Tensor& gm = t.grad_mut(m.id);
        for (size_t k = 0; k < rows.size(); ++k)
            for (int j = 0; j < c; ++j) gm.at(rows[k], j) += self.grad.at(static_cast<int>(k), j);
    };
    return push(std::move(n));
}

// ---------------------------------------------------------------------------
// geometry
// ---------------------------------------------------------------------------

Var Tape::cross3_rows(Var a, Var b) {
    const Node &na = check(a, "cross3_rows"), &nb = check(b, "cross3_rows");
    require_matrix(na.value, "cross3_rows");
    require_same_shape(na.value, nb.value, "cross3_rows");
    if (na.value.cols() != 3) throw ShapeError("cross3_rows: expects (r,3) inputs");
    const int r = na.value.rows();
    Node n;
    n.op = "cross3_rows";
    n.parents = {a.id, b.id};
    n.requires_grad = na.requires_grad || nb.requires_grad;
    n.value = Tensor({r, 3});
    for (int i = 0; i < r; ++i) {
        const double ax = na.value.at(i, 0), ay = na.value.at(i, 1), az = na.value.at(i, 2);
        const double bx = nb.value.at(i, 0), by = nb.value.at(i, 1), bz = nb.value.at(i, 2);
        n.value.at(i, 0) = ay * bz - az * by;
        n.value.at(i, 1) = az * bx - ax * bz;
        n.value.at(i, 2) = ax * by - ay * bx;
    }
    n.backward_fn = [a, b, r](Tape& t, const Node& self) {
        const Tensor &va = t.node(a.id).value, &vb = t.node(b.id).value;
        for (int i = 0; i < r; ++i) {
            const double gx = self.grad.at(i, 0), gy = self.grad.at(i, 1), gz = self.grad.at(i, 2);
            // d(a x b)/da contracted with g is b x g; d/db is g x a.
            if (t.node(a.id).requires_grad) {
                Tensor& ga = t.grad_mut(a.id);
                const double bx = vb.at(i, 0), by = vb.at(i, 1), bz = vb.at(i, 2);
                ga.at(i, 0) += by * gz - bz * gy;
                ga.at(i, 1) += bz * gx - bx * gz;
                ga.at(i, 2) += bx * gy - by * gx;
            }
            if (t.node(b.id).requires_grad) {
                Tensor& gb = t.grad_mut(b.id);
                const double ax = va.at(i, 0), ay = va.at(i, 1), az = va.at(i, 2);
                gb.at(i, 0) += gy * az - gz * ay;
                gb.at(i, 1) += gz * ax - gx * az;
                gb.at(i, 2) += gx * ay - gy * ax;
            }
        }
    };
    return push(std::move(n));
}

// ---------------------------------------------------------------------------
// driver utilities
// ---------------------------------------------------------------------------

GradResult evaluate_with_gradients(const TapeFn& f, const std::vector<Tensor>& inputs) {
    Tape tape;
    std::vector<Var> vars;
    vars.reserve(inputs.size());
    for (const Tensor& t : inputs) vars.push_back(tape.input(t));
    const Var out = f(tape, vars);
    tape.backward(out);
    GradResult res;
    res.value = tape.value(out).item();
    for (Var v : vars) res.gradients.push_back(tape.grad(v));
    return res;
}

Tensor finite_difference_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x, double eps) {
    Tensor grad(x.shape());
    Tensor probe = x;
    for (std::int64_t i = 0; i < x.size(); ++i) {
        const double h = eps * (1.0 + std::abs(x[i]));
        probe[i] = x[i] + h;
        const double fp = f(probe);
        probe[i] = x[i] - h;
        const double fm = f(probe);
        probe[i] = x[i];
        grad[i] = (fp - fm) / (2.0 * h);
    }
    return grad;
}

}  // namespace posediff
