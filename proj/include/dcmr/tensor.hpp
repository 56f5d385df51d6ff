#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dcmr/errors.hpp"

namespace dcmr {

// Dense row-major tensors of doubles plus a tape for reverse-mode gradients.
// Deliberately minimal: only the operations the cross-modal block and the
// contrastive losses need. No broadcasting, no views, no higher-order grads.

using Shape = std::vector<int>;

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

struct Tensor {
  Shape shape;            // all dims >= 1; empty shape = scalar
  std::vector<double> v;  // row-major, size == product(shape)
  int node = -1;          // handle into the tape that produced this value

  Tensor() : shape{}, v{0.0} {}

  Tensor(Shape s, std::vector<double> values) : shape(std::move(s)), v(std::move(values)) {
    std::int64_t n = 1;
    for (int d : shape) {
      if (d < 1) throw DimensionError("tensor dimension must be positive, got shape " + shape_str(shape));
      n *= d;
    }
    if (n != static_cast<std::int64_t>(v.size()))
      throw DimensionError("value count " + std::to_string(v.size()) + " does not match shape " + shape_str(shape));
  }

  static Tensor scalar(double x) { return Tensor({}, {x}); }
  static Tensor zeros(Shape s) {
    std::int64_t n = 1;
    for (int d : s) n *= std::max(d, 1);
    return Tensor(std::move(s), std::vector<double>(static_cast<size_t>(n), 0.0));
  }
  static Tensor filled(Shape s, double x) {
    Tensor t = zeros(std::move(s));
    std::fill(t.v.begin(), t.v.end(), x);
    return t;
  }
  static Tensor vec(std::vector<double> values) {
    int n = static_cast<int>(values.size());
    return Tensor({n}, std::move(values));
  }
  static Tensor matrix(int r, int c, std::vector<double> values) {
    return Tensor({r, c}, std::move(values));
  }
  static Tensor identity(int n) {
    Tensor t = zeros({n, n});
    for (int i = 0; i < n; ++i) t.v[static_cast<size_t>(i) * n + i] = 1.0;
    return t;
  }

  int rank() const { return static_cast<int>(shape.size()); }
  std::int64_t numel() const { return static_cast<std::int64_t>(v.size()); }
  bool tracked() const { return node >= 0; }

  int rows() const { return shape.at(0); }
  int cols() const { return shape.at(1); }

  double& at(int i) { return v[static_cast<size_t>(i)]; }
  double at(int i) const { return v[static_cast<size_t>(i)]; }
  double& at(int i, int j) { return v[static_cast<size_t>(i) * shape[1] + j]; }
  double at(int i, int j) const { return v[static_cast<size_t>(i) * shape[1] + j]; }

  double item() const {
    if (numel() != 1) throw ContractError("item() requires a scalar, got shape " + shape_str(shape));
    return v[0];
  }
};

inline bool same_shape(const Tensor& a, const Tensor& b) { return a.shape == b.shape; }

inline void check_finite(const Tensor& t, const char* op) {
  for (double x : t.v)
    if (!std::isfinite(x)) throw NumericError(std::string(op) + " produced a non-finite value");
}

// ---------------------------------------------------------------------------
// Gradient tape

class GradTape;

class Gradients {
public:
  // Gradient of the loss w.r.t. a tracked tensor; zeros if the tensor did
  // not influence the loss.
  Tensor of(const Tensor& t) const {
    if (t.node >= 0 && t.node < static_cast<int>(grads_.size()) && !grads_[t.node].v.empty() && reached_[t.node])
      return grads_[t.node];
    Tensor z = Tensor::zeros(t.shape);
    return z;
  }

  bool reached(const Tensor& t) const {
    return t.node >= 0 && t.node < static_cast<int>(reached_.size()) && reached_[t.node];
  }

private:
  friend class GradTape;
  std::vector<Tensor> grads_;
  std::vector<char> reached_;
};

// Append-only record of the forward computation. Node ids are topologically
// ordered by construction. One tape per training step; tapes are independent.
class GradTape {
public:
  // Backward fn: upstream gradient -> gradient w.r.t. each recorded input,
  // in the same order as the input node list (entries for untracked inputs
  // are ignored and may be empty tensors).
  using BackwardFn = std::function<std::vector<Tensor>(const Tensor& upstream)>;

  // Registers a leaf. Returns the same values with a node id attached.
  Tensor leaf(Tensor t) {
    t.node = add_node("leaf", {}, t.shape, nullptr);
    return t;
  }

  int add_node(const char* op, std::vector<int> inputs, Shape out_shape, BackwardFn backward) {
    nodes_.push_back(Node{op, std::move(inputs), std::move(out_shape), std::move(backward)});
    return static_cast<int>(nodes_.size()) - 1;
  }

  size_t size() const { return nodes_.size(); }

  // Exact reverse-mode gradients of a scalar loss w.r.t. every tracked node.
  Gradients reverse(const Tensor& loss) const {
    if (!loss.tracked() || loss.node >= static_cast<int>(nodes_.size()))
      throw ContractError("reverse-mode backprop requires a tape-tracked loss node");
    if (loss.numel() != 1)
      throw ContractError("loss node must be a scalar, got shape " + shape_str(loss.shape));

    Gradients out;
    out.grads_.resize(nodes_.size());
    out.reached_.assign(nodes_.size(), 0);
    out.grads_[loss.node] = Tensor::filled(loss.shape, 1.0);
    out.reached_[loss.node] = 1;

    for (int id = loss.node; id >= 0; --id) {
      if (!out.reached_[id]) continue;
      const Node& n = nodes_[static_cast<size_t>(id)];
      if (!n.backward) continue;  // leaf
      std::vector<Tensor> gs = n.backward(out.grads_[static_cast<size_t>(id)]);
      if (gs.size() != n.inputs.size())
        throw ContractError(std::string("backward for ") + n.op + " returned wrong arity");
      for (size_t k = 0; k < n.inputs.size(); ++k) {
        int j = n.inputs[k];
        if (j < 0) continue;
        Tensor& acc = out.grads_[static_cast<size_t>(j)];
        if (!out.reached_[j]) {
          acc = std::move(gs[k]);
          out.reached_[j] = 1;
        } else {
          for (size_t e = 0; e < acc.v.size(); ++e) acc.v[e] += gs[k].v[e];
        }
      }
    }
    return out;
  }

private:
  struct Node {
    const char* op;
    std::vector<int> inputs;
    Shape shape;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
};

inline Gradients reverse_gradients(const GradTape& tape, const Tensor& loss) {
  return tape.reverse(loss);
}

namespace detail {

inline bool should_record(const GradTape* tape, std::initializer_list<const Tensor*> ins) {
  if (!tape) return false;
  for (const Tensor* t : ins)
    if (t->tracked()) return true;
  return false;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Operations

inline Tensor matmul(const Tensor& a, const Tensor& b, GradTape* tape = nullptr) {
  if (a.rank() != 2 || b.rank() != 2)
    throw DimensionError("matmul requires rank-2 tensors, got " + shape_str(a.shape) + " and " + shape_str(b.shape));
  if (a.cols() != b.rows())
    throw DimensionError("matmul inner dimensions disagree: " + shape_str(a.shape) + " x " + shape_str(b.shape));
  const int m = a.rows(), k = a.cols(), n = b.cols();
  Tensor c = Tensor::zeros({m, n});
  for (int i = 0; i < m; ++i)
    for (int l = 0; l < k; ++l) {
      double av = a.at(i, l);
      if (av == 0.0) continue;  // keeps identity products bit-exact
      for (int j = 0; j < n; ++j) c.at(i, j) += av * b.at(l, j);
    }
  check_finite(c, "matmul");
  if (detail::should_record(tape, {&a, &b})) {
    c.node = tape->add_node("matmul", {a.node, b.node}, c.shape, [a, b](const Tensor& g) {
      const int m2 = a.rows(), k2 = a.cols(), n2 = b.cols();
      Tensor da = Tensor::zeros(a.shape);
      Tensor db = Tensor::zeros(b.shape);
      for (int i = 0; i < m2; ++i)
        for (int j = 0; j < n2; ++j) {
          double gv = g.at(i, j);
          if (gv == 0.0) continue;
          for (int l = 0; l < k2; ++l) {
            da.at(i, l) += gv * b.at(l, j);
            db.at(l, j) += a.at(i, l) * gv;
          }
        }
      return std::vector<Tensor>{std::move(da), std::move(db)};
    });
  }
  return c;
}

inline Tensor transpose(const Tensor& a, GradTape* tape = nullptr) {
  if (a.rank() != 2) throw DimensionError("transpose requires a rank-2 tensor, got " + shape_str(a.shape));
  Tensor t = Tensor::zeros({a.cols(), a.rows()});
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < a.cols(); ++j) t.at(j, i) = a.at(i, j);
  if (detail::should_record(tape, {&a})) {
    t.node = tape->add_node("transpose", {a.node}, t.shape, [](const Tensor& g) {
      return std::vector<Tensor>{transpose(g)};
    });
  }
  return t;
}

// Row-wise softmax of (scale * x), stabilized by row-max subtraction.
inline Tensor softmax_rows(const Tensor& x, double scale, GradTape* tape = nullptr) {
  if (x.rank() != 2) throw DimensionError("softmax_rows requires a rank-2 tensor, got " + shape_str(x.shape));
  if (!(scale > 0.0)) throw ContractError("softmax scale must be positive");
  const int r = x.rows(), c = x.cols();
  Tensor y = Tensor::zeros({r, c});
  for (int i = 0; i < r; ++i) {
    double mx = -HUGE_VAL;
    for (int j = 0; j < c; ++j) mx = std::max(mx, scale * x.at(i, j));
    double z = 0.0;
    for (int j = 0; j < c; ++j) {
      double e = std::exp(scale * x.at(i, j) - mx);
      y.at(i, j) = e;
      z += e;
    }
    for (int j = 0; j < c; ++j) y.at(i, j) /= z;
  }
  check_finite(y, "softmax_rows");
  if (detail::should_record(tape, {&x})) {
    y.node = tape->add_node("softmax_rows", {x.node}, y.shape, [y, scale, r, c](const Tensor& g) {
      Tensor dx = Tensor::zeros({r, c});
      for (int i = 0; i < r; ++i) {
        double dotgy = 0.0;
        for (int j = 0; j < c; ++j) dotgy += g.at(i, j) * y.at(i, j);
        for (int j = 0; j < c; ++j) dx.at(i, j) = scale * y.at(i, j) * (g.at(i, j) - dotgy);
      }
      return std::vector<Tensor>{std::move(dx)};
    });
  }
  return y;
}

// Layer normalization over the feature axis of a rank-1 tensor, population
// variance: (x - mean) / sqrt(var + eps) * gain + bias.
inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps,
                         GradTape* tape = nullptr) {
  if (x.rank() != 1 || x.shape[0] < 2)
    throw DimensionError("layer_norm requires a rank-1 tensor with at least 2 features, got " + shape_str(x.shape));
  if (!same_shape(x, gain) || !same_shape(x, bias))
    throw DimensionError("layer_norm gain/bias must match the input shape");
  if (eps < 0.0) throw ContractError("layer_norm eps must be non-negative");
  const int d = x.shape[0];
  double mean = 0.0;
  for (double e : x.v) mean += e;
  mean /= d;
  double var = 0.0;
  for (double e : x.v) var += (e - mean) * (e - mean);
  var /= d;
  if (var + eps <= 0.0) throw NumericError("layer_norm on constant input requires eps > 0");
  const double inv_std = 1.0 / std::sqrt(var + eps);
  Tensor xhat = Tensor::zeros({d});
  Tensor out = Tensor::zeros({d});
  for (int i = 0; i < d; ++i) {
    xhat.at(i) = (x.at(i) - mean) * inv_std;
    out.at(i) = xhat.at(i) * gain.at(i) + bias.at(i);
  }
  check_finite(out, "layer_norm");
  if (detail::should_record(tape, {&x, &gain, &bias})) {
    out.node = tape->add_node(
        "layer_norm", {x.node, gain.node, bias.node}, out.shape,
        [xhat, gain, inv_std, d](const Tensor& g) {
          Tensor dgain = Tensor::zeros({d});
          Tensor dbias = Tensor::zeros({d});
          Tensor dx = Tensor::zeros({d});
          double mean_gy = 0.0, mean_gyx = 0.0;
          for (int i = 0; i < d; ++i) {
            double gy = g.at(i) * gain.at(i);
            mean_gy += gy;
            mean_gyx += gy * xhat.at(i);
            dgain.at(i) = g.at(i) * xhat.at(i);
            dbias.at(i) = g.at(i);
          }
          mean_gy /= d;
          mean_gyx /= d;
          for (int i = 0; i < d; ++i) {
            double gy = g.at(i) * gain.at(i);
            dx.at(i) = (gy - mean_gy - xhat.at(i) * mean_gyx) * inv_std;
          }
          return std::vector<Tensor>{std::move(dx), std::move(dgain), std::move(dbias)};
        });
  }
  return out;
}

inline Tensor add(const Tensor& a, const Tensor& b, GradTape* tape = nullptr) {
  if (!same_shape(a, b))
    throw DimensionError("add requires equal shapes, got " + shape_str(a.shape) + " and " + shape_str(b.shape));
  Tensor c = a;
  c.node = -1;
  for (size_t i = 0; i < c.v.size(); ++i) c.v[i] += b.v[i];
  check_finite(c, "add");
  if (detail::should_record(tape, {&a, &b})) {
    c.node = tape->add_node("add", {a.node, b.node}, c.shape, [](const Tensor& g) {
      return std::vector<Tensor>{g, g};
    });
  }
  return c;
}

// Elementwise product; also the dropout-mask application.
inline Tensor mul(const Tensor& a, const Tensor& b, GradTape* tape = nullptr) {
  if (!same_shape(a, b))
    throw DimensionError("mul requires equal shapes, got " + shape_str(a.shape) + " and " + shape_str(b.shape));
  Tensor c = a;
  c.node = -1;
  for (size_t i = 0; i < c.v.size(); ++i) c.v[i] *= b.v[i];
  check_finite(c, "mul");
  if (detail::should_record(tape, {&a, &b})) {
    c.node = tape->add_node("mul", {a.node, b.node}, c.shape, [a, b](const Tensor& g) {
      Tensor da = g, db = g;
      da.node = db.node = -1;
      for (size_t i = 0; i < g.v.size(); ++i) {
        da.v[i] = g.v[i] * b.v[i];
        db.v[i] = g.v[i] * a.v[i];
      }
      return std::vector<Tensor>{std::move(da), std::move(db)};
    });
  }
  return c;
}

inline Tensor scale(const Tensor& a, double c, GradTape* tape = nullptr) {
  Tensor out = a;
  out.node = -1;
  for (double& e : out.v) e *= c;
  check_finite(out, "scale");
  if (detail::should_record(tape, {&a})) {
    out.node = tape->add_node("scale", {a.node}, out.shape, [c](const Tensor& g) {
      Tensor dg = g;
      dg.node = -1;
      for (double& e : dg.v) e *= c;
      return std::vector<Tensor>{std::move(dg)};
    });
  }
  return out;
}

inline Tensor sum(const Tensor& a, GradTape* tape = nullptr) {
  double s = 0.0;
  for (double e : a.v) s += e;
  Tensor out = Tensor::scalar(s);
  check_finite(out, "sum");
  if (detail::should_record(tape, {&a})) {
    Shape in_shape = a.shape;
    out.node = tape->add_node("sum", {a.node}, out.shape, [in_shape](const Tensor& g) {
      return std::vector<Tensor>{Tensor::filled(in_shape, g.v[0])};
    });
  }
  return out;
}

inline Tensor dot(const Tensor& a, const Tensor& b, GradTape* tape = nullptr) {
  if (a.rank() != 1 || b.rank() != 1 || !same_shape(a, b))
    throw DimensionError("dot requires equal rank-1 tensors, got " + shape_str(a.shape) + " and " + shape_str(b.shape));
  double s = 0.0;
  for (size_t i = 0; i < a.v.size(); ++i) s += a.v[i] * b.v[i];
  Tensor out = Tensor::scalar(s);
  check_finite(out, "dot");
  if (detail::should_record(tape, {&a, &b})) {
    out.node = tape->add_node("dot", {a.node, b.node}, out.shape, [a, b](const Tensor& g) {
      Tensor da = b, db = a;
      da.node = db.node = -1;
      for (double& e : da.v) e *= g.v[0];
      for (double& e : db.v) e *= g.v[0];
      return std::vector<Tensor>{std::move(da), std::move(db)};
    });
  }
  return out;
}

inline Tensor reshape(const Tensor& a, Shape s, GradTape* tape = nullptr) {
  Tensor out(std::move(s), a.v);
  if (out.numel() != a.numel())
    throw DimensionError("reshape cannot change element count: " + shape_str(a.shape) + " -> " + shape_str(out.shape));
  if (detail::should_record(tape, {&a})) {
    Shape in_shape = a.shape;
    out.node = tape->add_node("reshape", {a.node}, out.shape, [in_shape](const Tensor& g) {
      return std::vector<Tensor>{Tensor(in_shape, g.v)};
    });
  }
  return out;
}

inline Tensor slice_cols(const Tensor& a, int start, int len, GradTape* tape = nullptr) {
  if (a.rank() != 2) throw DimensionError("slice_cols requires a rank-2 tensor, got " + shape_str(a.shape));
  if (start < 0 || len < 1 || start + len > a.cols())
    throw DimensionError("slice_cols range [" + std::to_string(start) + ", " + std::to_string(start + len) +
                         ") out of bounds for " + shape_str(a.shape));
  Tensor out = Tensor::zeros({a.rows(), len});
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < len; ++j) out.at(i, j) = a.at(i, start + j);
  if (detail::should_record(tape, {&a})) {
    Shape in_shape = a.shape;
    out.node = tape->add_node("slice_cols", {a.node}, out.shape, [in_shape, start, len](const Tensor& g) {
      Tensor da = Tensor::zeros(in_shape);
      for (int i = 0; i < g.rows(); ++i)
        for (int j = 0; j < len; ++j) da.at(i, start + j) = g.at(i, j);
      return std::vector<Tensor>{std::move(da)};
    });
  }
  return out;
}

inline Tensor concat_cols(std::span<const Tensor> parts, GradTape* tape = nullptr) {
  if (parts.empty()) throw DimensionError("concat_cols requires at least one tensor");
  const int r = parts[0].rows();
  int total = 0;
  bool any_tracked = false;
  for (const Tensor& p : parts) {
    if (p.rank() != 2 || p.rows() != r) throw DimensionError("concat_cols parts must share the row count");
    total += p.cols();
    any_tracked = any_tracked || p.tracked();
  }
  Tensor out = Tensor::zeros({r, total});
  int off = 0;
  for (const Tensor& p : parts) {
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < p.cols(); ++j) out.at(i, off + j) = p.at(i, j);
    off += p.cols();
  }
  if (tape && any_tracked) {
    std::vector<int> ids;
    std::vector<int> widths;
    for (const Tensor& p : parts) {
      ids.push_back(p.node);
      widths.push_back(p.cols());
    }
    out.node = tape->add_node("concat_cols", ids, out.shape, [widths, r](const Tensor& g) {
      std::vector<Tensor> gs;
      int o = 0;
      for (int w : widths) {
        gs.push_back(slice_cols(g, o, w));
        o += w;
      }
      return gs;
    });
  }
  return out;
}

// Stacks rank-1 tensors (or single-row matrices) into a [n x d] matrix.
inline Tensor concat_rows(std::span<const Tensor> parts, GradTape* tape = nullptr) {
  if (parts.empty()) throw DimensionError("concat_rows requires at least one tensor");
  int d = -1;
  bool any_tracked = false;
  for (const Tensor& p : parts) {
    int w = p.rank() == 1 ? p.shape[0] : (p.rank() == 2 && p.rows() == 1 ? p.cols() : -1);
    if (w < 0) throw DimensionError("concat_rows parts must be vectors or single rows");
    if (d < 0) d = w;
    if (w != d) throw DimensionError("concat_rows parts must share the feature dimension");
    any_tracked = any_tracked || p.tracked();
  }
  const int n = static_cast<int>(parts.size());
  Tensor out = Tensor::zeros({n, d});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) out.at(i, j) = parts[static_cast<size_t>(i)].v[static_cast<size_t>(j)];
  if (tape && any_tracked) {
    std::vector<int> ids;
    std::vector<Shape> shapes;
    for (const Tensor& p : parts) {
      ids.push_back(p.node);
      shapes.push_back(p.shape);
    }
    out.node = tape->add_node("concat_rows", ids, out.shape, [shapes, d](const Tensor& g) {
      std::vector<Tensor> gs;
      for (size_t i = 0; i < shapes.size(); ++i) {
        std::vector<double> row(g.v.begin() + static_cast<std::ptrdiff_t>(i) * d,
                                g.v.begin() + static_cast<std::ptrdiff_t>(i + 1) * d);
        gs.emplace_back(shapes[i], std::move(row));
      }
      return gs;
    });
  }
  return out;
}

inline Tensor mean_rows(const Tensor& a, GradTape* tape = nullptr) {
  if (a.rank() != 2) throw DimensionError("mean_rows requires a rank-2 tensor, got " + shape_str(a.shape));
  const int r = a.rows(), c = a.cols();
  Tensor out = Tensor::zeros({c});
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) out.at(j) += a.at(i, j);
  for (int j = 0; j < c; ++j) out.at(j) /= r;
  check_finite(out, "mean_rows");
  if (detail::should_record(tape, {&a})) {
    out.node = tape->add_node("mean_rows", {a.node}, out.shape, [r, c](const Tensor& g) {
      Tensor da = Tensor::zeros({r, c});
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) da.at(i, j) = g.at(j) / r;
      return std::vector<Tensor>{std::move(da)};
    });
  }
  return out;
}

inline Tensor l2_normalize_rows(const Tensor& a, GradTape* tape = nullptr) {
  if (a.rank() != 2) throw DimensionError("l2_normalize_rows requires a rank-2 tensor, got " + shape_str(a.shape));
  const int r = a.rows(), c = a.cols();
  Tensor out = Tensor::zeros({r, c});
  std::vector<double> norms(static_cast<size_t>(r));
  for (int i = 0; i < r; ++i) {
    double n2 = 0.0;
    for (int j = 0; j < c; ++j) n2 += a.at(i, j) * a.at(i, j);
    double n = std::sqrt(n2);
    if (n == 0.0) throw NumericError("cannot L2-normalize a zero vector (row " + std::to_string(i) + ")");
    norms[static_cast<size_t>(i)] = n;
    for (int j = 0; j < c; ++j) out.at(i, j) = a.at(i, j) / n;
  }
  check_finite(out, "l2_normalize_rows");
  if (detail::should_record(tape, {&a})) {
    out.node = tape->add_node("l2_normalize_rows", {a.node}, out.shape, [out, norms, r, c](const Tensor& g) {
      Tensor da = Tensor::zeros({r, c});
      for (int i = 0; i < r; ++i) {
        double gy = 0.0;
        for (int j = 0; j < c; ++j) gy += g.at(i, j) * out.at(i, j);
        for (int j = 0; j < c; ++j) da.at(i, j) = (g.at(i, j) - out.at(i, j) * gy) / norms[static_cast<size_t>(i)];
      }
      return std::vector<Tensor>{std::move(da)};
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Central-difference gradient: (f(x + h e_i) - f(x - h e_i)) / 2h.
// Test oracle; stays independent of the tape machinery above.
inline Tensor finite_diff_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x, double h) {
  if (!(h > 0.0)) throw ContractError("finite difference step must be positive");
  Tensor g = Tensor::zeros(x.shape);
  Tensor probe = x;
  probe.node = -1;
  for (size_t i = 0; i < x.v.size(); ++i) {
    const double orig = probe.v[i];
    probe.v[i] = orig + h;
    double fp = f(probe);
    probe.v[i] = orig - h;
    double fm = f(probe);
    probe.v[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw NumericError("finite_diff_gradient: objective returned a non-finite value");
    g.v[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

}  // namespace dcmr
