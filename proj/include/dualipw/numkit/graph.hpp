#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dualipw/numkit/tensor.hpp"

namespace dualipw::numkit {

/// Raised for any problem attributable to one graph node. `node()` is the
/// node's label or "<op>#<index>".
class GraphError : public std::runtime_error {
 public:
  GraphError(std::string node, const std::string& what)
      : std::runtime_error(node + ": " + what), node_(std::move(node)) {}
  const std::string& node() const { return node_; }

 private:
  std::string node_;
};

class ShapeError : public GraphError {
  using GraphError::GraphError;
};

class NumericError : public GraphError {
  using GraphError::GraphError;
};

struct Var {
  std::size_t id = std::numeric_limits<std::size_t>::max();
};

/// Define-by-run reverse-mode tape over small dense matrices.
///
/// Every op evaluates eagerly when it is appended, so node order is a
/// topological order and `backward` is a single reverse sweep. Gradients
/// flow only into parameter leaves; `input`, `constant` and `detach` nodes
/// are stop-gradient.
class Graph {
 public:
  enum class Op {
    kParameter, kInput, kConstant, kDetach,
    kAffine, kMatMul, kAdd, kSub, kMul, kDiv, kScale,
    kElu, kSigmoid, kTanh, kExp, kLog, kClip,
    kSoftmax, kLogSoftmax, kSum, kMean, kRowSum,
    kConcatCols, kSliceCols, kReshape,
  };

  // --- leaves ---------------------------------------------------------

  Var parameter(const std::string& name, const Tensor& value) {
    Node n{Op::kParameter, {}, value};
    n.label = name;
    n.requires_grad = true;
    return push(std::move(n));
  }

  Var parameter(const ParamSet& params, const std::string& name) {
    auto it = params.find(name);
    if (it == params.end()) {
      throw GraphError(name, "parameter leaf is not bound");
    }
    return parameter(name, it->second);
  }

  Var input(const std::string& name, Tensor value) {
    Node n{Op::kInput, {}, std::move(value)};
    n.label = name;
    return push(std::move(n));
  }

  Var constant(Tensor value) { return push(Node{Op::kConstant, {}, std::move(value)}); }

  Var detach(Var x) { return push(Node{Op::kDetach, {x.id}, at(x).value}); }

  // --- dense ----------------------------------------------------------

  // x[n,in] * w[out,in]^T + b[out]  ->  [n,out]
  Var affine(Var x, Var w, Var b) {
    const Tensor& xv = at(x).value;
    const Tensor& wv = at(w).value;
    const Tensor& bv = at(b).value;
    const std::size_t n = xv.rows(), in = xv.cols(), out = wv.rows();
    if (wv.cols() != in || bv.size() != out) {
      throw ShapeError(pending("affine"), "x" + shape_string(xv.shape()) + " w" +
                                              shape_string(wv.shape()) + " b" +
                                              shape_string(bv.shape()));
    }
    Tensor y(Shape{n, out});
    const double* xp = xv.data().data();
    const double* wp = wv.data().data();
    const double* bp = bv.data().data();
    double* yp = y.data().data();
    // Same summation order per output (bias, then k ascending) as the
    // naive dot product, laid out so the loop over outputs vectorizes.
    std::vector<double> wt(in * out);
    for (std::size_t o = 0; o < out; ++o) {
      for (std::size_t k = 0; k < in; ++k) wt[k * out + o] = wp[o * in + k];
    }
    for (std::size_t i = 0; i < n; ++i) {
      const double* xi = xp + i * in;
      double* yi = yp + i * out;
      for (std::size_t o = 0; o < out; ++o) yi[o] = bp[o];
      for (std::size_t k = 0; k < in; ++k) {
        const double xk = xi[k];
        const double* wk = wt.data() + k * out;
        for (std::size_t o = 0; o < out; ++o) yi[o] += xk * wk[o];
      }
    }
    return push(Node{Op::kAffine, {x.id, w.id, b.id}, std::move(y)});
  }

  // a[n,k] * b[k,m] -> [n,m]
  Var matmul(Var a, Var b) {
    const Tensor& av = at(a).value;
    const Tensor& bv = at(b).value;
    const std::size_t n = av.rows(), k = av.cols(), m = bv.cols();
    if (bv.rows() != k) {
      throw ShapeError(pending("matmul"),
                       shape_string(av.shape()) + " x " + shape_string(bv.shape()));
    }
    Tensor y(Shape{n, m});
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t p = 0; p < k; ++p) {
        const double aip = av[i * k + p];
        if (aip == 0.0) continue;
        for (std::size_t j = 0; j < m; ++j) y[i * m + j] += aip * bv[p * m + j];
      }
    }
    return push(Node{Op::kMatMul, {a.id, b.id}, std::move(y)});
  }

  // --- broadcasting elementwise ----------------------------------------
  // Shapes broadcast per dimension when one side is 1.

  Var add(Var a, Var b) { return binary(Op::kAdd, "add", a, b); }
  Var sub(Var a, Var b) { return binary(Op::kSub, "sub", a, b); }
  Var mul(Var a, Var b) { return binary(Op::kMul, "mul", a, b); }
  Var div(Var a, Var b) { return binary(Op::kDiv, "div", a, b); }

  Var scale(Var x, double s) {
    Tensor y = as_matrix(at(x).value);
    for (double& v : y.data()) v *= s;
    Node n{Op::kScale, {x.id}, std::move(y)};
    n.a = s;
    return push(std::move(n));
  }

  // --- unary ------------------------------------------------------------

  Var elu(Var x, double alpha = 1.0) {
    Tensor y = as_matrix(at(x).value);
    for (double& v : y.data()) v = v > 0.0 ? v : alpha * std::expm1(v);
    Node n{Op::kElu, {x.id}, std::move(y)};
    n.a = alpha;
    return push(std::move(n));
  }

  Var sigmoid(Var x) {
    Tensor y = as_matrix(at(x).value);
    for (double& v : y.data()) {
      if (v >= 0.0) {
        v = 1.0 / (1.0 + std::exp(-v));
      } else {
        const double e = std::exp(v);
        v = e / (1.0 + e);
      }
    }
    return push(Node{Op::kSigmoid, {x.id}, std::move(y)});
  }

  Var tanh(Var x) {
    Tensor y = as_matrix(at(x).value);
    for (double& v : y.data()) v = std::tanh(v);
    return push(Node{Op::kTanh, {x.id}, std::move(y)});
  }

  Var exp(Var x) {
    Tensor y = as_matrix(at(x).value);
    for (double& v : y.data()) v = std::exp(v);
    return push(Node{Op::kExp, {x.id}, std::move(y)});
  }

  Var log(Var x) {
    Tensor y = as_matrix(at(x).value);
    for (double& v : y.data()) v = std::log(v);
    return push(Node{Op::kLog, {x.id}, std::move(y)});
  }

  // Gradient passes where lo <= x <= hi, zero elsewhere.
  Var clip(Var x, double lo, double hi) {
    Tensor y = as_matrix(at(x).value);
    for (double& v : y.data()) v = std::clamp(v, lo, hi);
    Node n{Op::kClip, {x.id}, std::move(y)};
    n.a = lo;
    n.b = hi;
    return push(std::move(n));
  }

  // --- row-wise normalisation ----------------------------------------

  Var softmax(Var x) {
    Tensor y = as_matrix(at(x).value);
    const std::size_t r = y.rows(), c = y.cols();
    for (std::size_t i = 0; i < r; ++i) {
      double* row = y.data().data() + i * c;
      const double mx = *std::max_element(row, row + c);
      double z = 0.0;
      for (std::size_t j = 0; j < c; ++j) z += (row[j] = std::exp(row[j] - mx));
      for (std::size_t j = 0; j < c; ++j) row[j] /= z;
    }
    return push(Node{Op::kSoftmax, {x.id}, std::move(y)});
  }

  Var log_softmax(Var x) {
    Tensor y = as_matrix(at(x).value);
    const std::size_t r = y.rows(), c = y.cols();
    for (std::size_t i = 0; i < r; ++i) {
      double* row = y.data().data() + i * c;
      const double mx = *std::max_element(row, row + c);
      double z = 0.0;
      for (std::size_t j = 0; j < c; ++j) z += std::exp(row[j] - mx);
      const double lse = mx + std::log(z);
      for (std::size_t j = 0; j < c; ++j) row[j] -= lse;
    }
    return push(Node{Op::kLogSoftmax, {x.id}, std::move(y)});
  }

  // --- reductions -------------------------------------------------------

  Var sum(Var x) {
    double s = 0.0;
    for (double v : at(x).value.data()) s += v;
    return push(Node{Op::kSum, {x.id}, Tensor(Shape{1, 1}, std::vector{s})});
  }

  Var mean(Var x) {
    const Tensor& xv = at(x).value;
    double s = 0.0;
    for (double v : xv.data()) s += v;
    return push(Node{Op::kMean, {x.id},
                     Tensor(Shape{1, 1}, std::vector{s / static_cast<double>(xv.size())})});
  }

  // [n,c] -> [n,1]
  Var row_sum(Var x) {
    const Tensor& xv = at(x).value;
    const std::size_t r = xv.rows(), c = xv.cols();
    Tensor y(Shape{r, 1});
    for (std::size_t i = 0; i < r; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < c; ++j) s += xv[i * c + j];
      y[i] = s;
    }
    return push(Node{Op::kRowSum, {x.id}, std::move(y)});
  }

  // --- structural ---------------------------------------------------------

  Var concat_cols(std::span<const Var> parts) {
    if (parts.empty()) throw ShapeError(pending("concat"), "no inputs");
    const std::size_t r = at(parts[0]).value.rows();
    std::size_t total = 0;
    std::vector<std::size_t> ids;
    for (Var p : parts) {
      if (at(p).value.rows() != r) {
        throw ShapeError(pending("concat"), "row count mismatch");
      }
      total += at(p).value.cols();
      ids.push_back(p.id);
    }
    Tensor y(Shape{r, total});
    std::size_t off = 0;
    for (Var p : parts) {
      const Tensor& pv = at(p).value;
      const std::size_t c = pv.cols();
      for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) y[i * total + off + j] = pv[i * c + j];
      }
      off += c;
    }
    return push(Node{Op::kConcatCols, std::move(ids), std::move(y)});
  }

  // Columns [begin, end).
  Var slice_cols(Var x, std::size_t begin, std::size_t end) {
    const Tensor& xv = at(x).value;
    const std::size_t r = xv.rows(), c = xv.cols();
    if (begin >= end || end > c) {
      throw ShapeError(pending("slice"), "columns [" + std::to_string(begin) + "," +
                                             std::to_string(end) + ") of " +
                                             shape_string(xv.shape()));
    }
    const std::size_t w = end - begin;
    Tensor y(Shape{r, w});
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < w; ++j) y[i * w + j] = xv[i * c + begin + j];
    }
    Node n{Op::kSliceCols, {x.id}, std::move(y)};
    n.i0 = begin;
    return push(std::move(n));
  }

  Var reshape(Var x, std::size_t rows, std::size_t cols) {
    const Tensor& xv = at(x).value;
    if (rows * cols != xv.size()) {
      throw ShapeError(pending("reshape"), shape_string(xv.shape()) + " -> [" +
                                               std::to_string(rows) + "," +
                                               std::to_string(cols) + "]");
    }
    std::vector<double> d(xv.data().begin(), xv.data().end());
    return push(Node{Op::kReshape, {x.id}, Tensor(Shape{rows, cols}, std::move(d))});
  }

  // --- access -------------------------------------------------------------

  void label(Var v, std::string name) { nodes_.at(v.id).label = std::move(name); }
  const Tensor& value(Var v) const { return at(v).value; }
  bool requires_grad(Var v) const { return at(v).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  /// d(loss)/d(parameter) for every parameter leaf in the graph. A parameter
  /// bound more than once accumulates into one entry; unreachable
  /// parameters get zeros.
  ParamSet backward(Var loss) const {
    const Node& ln = at(loss);
    if (ln.value.size() != 1) {
      throw ShapeError(describe(loss.id), "loss must be scalar, got " +
                                              shape_string(ln.value.shape()));
    }
    std::vector<Tensor> grads(loss.id + 1);
    std::vector<bool> has(loss.id + 1, false);
    grads[loss.id] = Tensor(ln.value.shape(), 1.0);
    has[loss.id] = true;

    auto accum = [&](std::size_t id) -> Tensor& {
      if (!has[id]) {
        grads[id] = Tensor(nodes_[id].value.shape());
        has[id] = true;
      }
      return grads[id];
    };

    for (std::size_t id = loss.id + 1; id-- > 0;) {
      const Node& n = nodes_[id];
      if (!has[id] || !n.requires_grad) continue;
      const Tensor& gy = grads[id];
      switch (n.op) {
        case Op::kParameter:
        case Op::kInput:
        case Op::kConstant:
        case Op::kDetach:
          break;
        case Op::kAffine: {
          const Node& xn = nodes_[n.inputs[0]];
          const Node& wn = nodes_[n.inputs[1]];
          const std::size_t rows = xn.value.rows(), in = xn.value.cols(),
                            out = wn.value.rows();
          if (xn.requires_grad) {
            Tensor& gx = accum(n.inputs[0]);
            for (std::size_t i = 0; i < rows; ++i) {
              for (std::size_t o = 0; o < out; ++o) {
                const double g = gy[i * out + o];
                if (g == 0.0) continue;
                const double* wo = wn.value.data().data() + o * in;
                double* gxi = gx.data().data() + i * in;
                for (std::size_t k = 0; k < in; ++k) gxi[k] += g * wo[k];
              }
            }
          }
          if (wn.requires_grad) {
            Tensor& gw = accum(n.inputs[1]);
            for (std::size_t i = 0; i < rows; ++i) {
              const double* xi = xn.value.data().data() + i * in;
              for (std::size_t o = 0; o < out; ++o) {
                const double g = gy[i * out + o];
                if (g == 0.0) continue;
                double* gwo = gw.data().data() + o * in;
                for (std::size_t k = 0; k < in; ++k) gwo[k] += g * xi[k];
              }
            }
          }
          if (nodes_[n.inputs[2]].requires_grad) {
            Tensor& gb = accum(n.inputs[2]);
            for (std::size_t i = 0; i < rows; ++i) {
              for (std::size_t o = 0; o < out; ++o) gb[o] += gy[i * out + o];
            }
          }
          break;
        }
        case Op::kMatMul: {
          const Node& an = nodes_[n.inputs[0]];
          const Node& bn = nodes_[n.inputs[1]];
          const std::size_t r = an.value.rows(), k = an.value.cols(),
                            m = bn.value.cols();
          if (an.requires_grad) {
            Tensor& ga = accum(n.inputs[0]);
            for (std::size_t i = 0; i < r; ++i) {
              for (std::size_t p = 0; p < k; ++p) {
                double s = 0.0;
                for (std::size_t j = 0; j < m; ++j) s += gy[i * m + j] * bn.value[p * m + j];
                ga[i * k + p] += s;
              }
            }
          }
          if (bn.requires_grad) {
            Tensor& gb = accum(n.inputs[1]);
            for (std::size_t i = 0; i < r; ++i) {
              for (std::size_t p = 0; p < k; ++p) {
                const double aip = an.value[i * k + p];
                if (aip == 0.0) continue;
                for (std::size_t j = 0; j < m; ++j) gb[p * m + j] += aip * gy[i * m + j];
              }
            }
          }
          break;
        }
        case Op::kAdd:
        case Op::kSub:
        case Op::kMul:
        case Op::kDiv:
          binary_backward(n, gy, accum);
          break;
        case Op::kScale:
          unary_backward(n, gy, accum, [&](std::size_t, double g) { return g * n.a; });
          break;
        case Op::kElu: {
          const Tensor& x = nodes_[n.inputs[0]].value;
          unary_backward(n, gy, accum, [&](std::size_t i, double g) {
            return x[i] > 0.0 ? g : g * n.a * std::exp(x[i]);
          });
          break;
        }
        case Op::kSigmoid:
          unary_backward(n, gy, accum, [&](std::size_t i, double g) {
            const double y = n.value[i];
            return g * y * (1.0 - y);
          });
          break;
        case Op::kTanh:
          unary_backward(n, gy, accum, [&](std::size_t i, double g) {
            const double y = n.value[i];
            return g * (1.0 - y * y);
          });
          break;
        case Op::kExp:
          unary_backward(n, gy, accum,
                         [&](std::size_t i, double g) { return g * n.value[i]; });
          break;
        case Op::kLog: {
          const Tensor& x = nodes_[n.inputs[0]].value;
          unary_backward(n, gy, accum, [&](std::size_t i, double g) { return g / x[i]; });
          break;
        }
        case Op::kClip: {
          const Tensor& x = nodes_[n.inputs[0]].value;
          unary_backward(n, gy, accum, [&](std::size_t i, double g) {
            return (x[i] >= n.a && x[i] <= n.b) ? g : 0.0;
          });
          break;
        }
        case Op::kSoftmax: {
          if (!nodes_[n.inputs[0]].requires_grad) break;
          Tensor& gx = accum(n.inputs[0]);
          const std::size_t r = n.value.rows(), c = n.value.cols();
          for (std::size_t i = 0; i < r; ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < c; ++j) dot += gy[i * c + j] * n.value[i * c + j];
            for (std::size_t j = 0; j < c; ++j) {
              gx[i * c + j] += n.value[i * c + j] * (gy[i * c + j] - dot);
            }
          }
          break;
        }
        case Op::kLogSoftmax: {
          if (!nodes_[n.inputs[0]].requires_grad) break;
          Tensor& gx = accum(n.inputs[0]);
          const std::size_t r = n.value.rows(), c = n.value.cols();
          for (std::size_t i = 0; i < r; ++i) {
            double gs = 0.0;
            for (std::size_t j = 0; j < c; ++j) gs += gy[i * c + j];
            for (std::size_t j = 0; j < c; ++j) {
              gx[i * c + j] += gy[i * c + j] - std::exp(n.value[i * c + j]) * gs;
            }
          }
          break;
        }
        case Op::kSum:
        case Op::kMean: {
          if (!nodes_[n.inputs[0]].requires_grad) break;
          Tensor& gx = accum(n.inputs[0]);
          const double g = n.op == Op::kSum ? gy[0] : gy[0] / static_cast<double>(gx.size());
          for (double& v : gx.data()) v += g;
          break;
        }
        case Op::kRowSum: {
          if (!nodes_[n.inputs[0]].requires_grad) break;
          Tensor& gx = accum(n.inputs[0]);
          const std::size_t r = gx.rows(), c = gx.cols();
          for (std::size_t i = 0; i < r; ++i) {
            for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += gy[i];
          }
          break;
        }
        case Op::kConcatCols: {
          const std::size_t r = n.value.rows(), total = n.value.cols();
          std::size_t off = 0;
          for (std::size_t in : n.inputs) {
            const std::size_t c = nodes_[in].value.cols();
            if (nodes_[in].requires_grad) {
              Tensor& gx = accum(in);
              for (std::size_t i = 0; i < r; ++i) {
                for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += gy[i * total + off + j];
              }
            }
            off += c;
          }
          break;
        }
        case Op::kSliceCols: {
          if (!nodes_[n.inputs[0]].requires_grad) break;
          Tensor& gx = accum(n.inputs[0]);
          const std::size_t r = n.value.rows(), w = n.value.cols(), c = gx.cols();
          for (std::size_t i = 0; i < r; ++i) {
            for (std::size_t j = 0; j < w; ++j) gx[i * c + n.i0 + j] += gy[i * w + j];
          }
          break;
        }
        case Op::kReshape: {
          if (!nodes_[n.inputs[0]].requires_grad) break;
          Tensor& gx = accum(n.inputs[0]);
          for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i];
          break;
        }
      }
    }

    ParamSet out;
    for (std::size_t id = 0; id < nodes_.size(); ++id) {
      const Node& n = nodes_[id];
      if (n.op != Op::kParameter) continue;
      auto [it, inserted] = out.try_emplace(n.label, n.value.shape());
      if (id <= loss.id && has[id]) {
        for (std::size_t i = 0; i < it->second.size(); ++i) it->second[i] += grads[id][i];
      }
    }
    return out;
  }

  static const char* op_name(Op op) {
    switch (op) {
      case Op::kParameter: return "parameter";
      case Op::kInput: return "input";
      case Op::kConstant: return "constant";
      case Op::kDetach: return "detach";
      case Op::kAffine: return "affine";
      case Op::kMatMul: return "matmul";
      case Op::kAdd: return "add";
      case Op::kSub: return "sub";
      case Op::kMul: return "mul";
      case Op::kDiv: return "div";
      case Op::kScale: return "scale";
      case Op::kElu: return "elu";
      case Op::kSigmoid: return "sigmoid";
      case Op::kTanh: return "tanh";
      case Op::kExp: return "exp";
      case Op::kLog: return "log";
      case Op::kClip: return "clip";
      case Op::kSoftmax: return "softmax";
      case Op::kLogSoftmax: return "log_softmax";
      case Op::kSum: return "sum";
      case Op::kMean: return "mean";
      case Op::kRowSum: return "row_sum";
      case Op::kConcatCols: return "concat";
      case Op::kSliceCols: return "slice";
      case Op::kReshape: return "reshape";
    }
    return "?";
  }

 private:
  struct Node {
    Node(Op o, std::vector<std::size_t> in, Tensor v)
        : op(o), inputs(std::move(in)), value(std::move(v)) {}

    Op op;
    std::vector<std::size_t> inputs;
    Tensor value;
    std::string label;
    bool requires_grad = false;
    double a = 0.0;
    double b = 0.0;
    std::size_t i0 = 0;
  };

  const Node& at(Var v) const {
    if (v.id >= nodes_.size()) throw std::out_of_range("graph: unknown node");
    return nodes_[v.id];
  }

  std::string describe(std::size_t id) const {
    const Node& n = nodes_[id];
    if (!n.label.empty()) return n.label;
    return std::string(op_name(n.op)) + "#" + std::to_string(id);
  }

  std::string pending(const char* op) const {
    return std::string(op) + "#" + std::to_string(nodes_.size());
  }

  static Tensor as_matrix(const Tensor& t) {
    std::vector<double> d(t.data().begin(), t.data().end());
    return Tensor(Shape{t.rows(), t.cols()}, std::move(d));
  }

  Var push(Node n) {
    if (n.op != Op::kParameter && n.op != Op::kDetach) {
      for (std::size_t in : n.inputs) {
        if (nodes_[in].requires_grad) {
          n.requires_grad = true;
          break;
        }
      }
    }
    const std::size_t id = nodes_.size();
    nodes_.push_back(std::move(n));
    if (!nodes_.back().value.all_finite()) {
      throw NumericError(describe(id), "non-finite value");
    }
    return Var{id};
  }

  static std::size_t bidx(std::size_t r, std::size_t c, std::size_t rows,
                          std::size_t cols) {
    return (rows == 1 ? 0 : r) * cols + (cols == 1 ? 0 : c);
  }

  Var binary(Op op, const char* name, Var a, Var b) {
    const Tensor& av = at(a).value;
    const Tensor& bv = at(b).value;
    const std::size_t ar = av.rows(), ac = av.cols(), br = bv.rows(), bc = bv.cols();
    if ((ar != br && ar != 1 && br != 1) || (ac != bc && ac != 1 && bc != 1)) {
      throw ShapeError(pending(name), "cannot broadcast " + shape_string(av.shape()) +
                                          " with " + shape_string(bv.shape()));
    }
    const std::size_t r = std::max(ar, br), c = std::max(ac, bc);
    Tensor y(Shape{r, c});
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < c; ++j) {
        const double x1 = av[bidx(i, j, ar, ac)];
        const double x2 = bv[bidx(i, j, br, bc)];
        double v = 0.0;
        switch (op) {
          case Op::kAdd: v = x1 + x2; break;
          case Op::kSub: v = x1 - x2; break;
          case Op::kMul: v = x1 * x2; break;
          default: v = x1 / x2; break;
        }
        y[i * c + j] = v;
      }
    }
    return push(Node{op, {a.id, b.id}, std::move(y)});
  }

  template <class Accum>
  void binary_backward(const Node& n, const Tensor& gy, Accum& accum) const {
    const Node& an = nodes_[n.inputs[0]];
    const Node& bn = nodes_[n.inputs[1]];
    const std::size_t ar = an.value.rows(), ac = an.value.cols();
    const std::size_t br = bn.value.rows(), bc = bn.value.cols();
    const std::size_t r = n.value.rows(), c = n.value.cols();
    Tensor* ga = an.requires_grad ? &accum(n.inputs[0]) : nullptr;
    Tensor* gb = bn.requires_grad ? &accum(n.inputs[1]) : nullptr;
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < c; ++j) {
        const double g = gy[i * c + j];
        const std::size_t ia = bidx(i, j, ar, ac), ib = bidx(i, j, br, bc);
        const double x1 = an.value[ia], x2 = bn.value[ib];
        double da = 0.0, db = 0.0;
        switch (n.op) {
          case Op::kAdd: da = g; db = g; break;
          case Op::kSub: da = g; db = -g; break;
          case Op::kMul: da = g * x2; db = g * x1; break;
          default: da = g / x2; db = -g * x1 / (x2 * x2); break;
        }
        if (ga) (*ga)[ia] += da;
        if (gb) (*gb)[ib] += db;
      }
    }
  }

  template <class Accum, class Fn>
  void unary_backward(const Node& n, const Tensor& gy, Accum& accum, Fn&& fn) const {
    if (!nodes_[n.inputs[0]].requires_grad) return;
    Tensor& gx = accum(n.inputs[0]);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += fn(i, gy[i]);
  }

  std::vector<Node> nodes_;
};

}  // namespace dualipw::numkit
