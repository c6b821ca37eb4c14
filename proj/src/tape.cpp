#include "sigcast/tape.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace sigcast {

namespace {

#ifndef NDEBUG
void debug_check_finite(const Tensor& t, const char* op) {
  if (!t.all_finite()) {
    assert(false && "non-finite tensor produced");
    (void)op;
  }
}
#else
void debug_check_finite(const Tensor&, const char*) {}
#endif

double gelu_fwd(double x) {
  return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2));
}

double gelu_grad(double x) {
  const double phi = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2)) + x * phi;
}

}  // namespace

void Tape::check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " +
                     b.shape_str());
  }
}

Var Tape::push(Tensor value, bool requires_grad, std::function<void(Tape&, int)> back) {
  debug_check_finite(value, "push");
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  n.back = std::move(back);
  nodes_.push_back(std::move(n));
  grads_ready_ = false;
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  return push(std::move(value), requires_grad, {});
}

const Tensor& Tape::grad(Var v) const {
  if (!grads_ready_) throw ContractError("grad requested before backward()");
  return nodes_[static_cast<std::size_t>(v.id)].grad;
}

// --- elementwise -----------------------------------------------------------

Var Tape::add(Var a, Var b) {
  const Tensor& x = val(a);
  const Tensor& y = val(b);
  check_same_shape(x, y, "add");
  Tensor out = x;
  for (int i = 0; i < out.numel(); ++i) out[i] += y[i];
  bool rg = node(a).requires_grad || node(b).requires_grad;
  int ai = a.id, bi = b.id;
  return push(std::move(out), rg, [ai, bi](Tape& t, int self) {
    const Tensor& g = t.grad_buf(self);
    if (t.nodes_[ai].requires_grad) {
      Tensor& ga = t.grad_buf(ai);
      for (int i = 0; i < g.numel(); ++i) ga[i] += g[i];
    }
    if (t.nodes_[bi].requires_grad) {
      Tensor& gb = t.grad_buf(bi);
      for (int i = 0; i < g.numel(); ++i) gb[i] += g[i];
    }
  });
}

Var Tape::sub(Var a, Var b) {
  const Tensor& x = val(a);
  const Tensor& y = val(b);
  check_same_shape(x, y, "sub");
  Tensor out = x;
  for (int i = 0; i < out.numel(); ++i) out[i] -= y[i];
  bool rg = node(a).requires_grad || node(b).requires_grad;
  int ai = a.id, bi = b.id;
  return push(std::move(out), rg, [ai, bi](Tape& t, int self) {
    const Tensor& g = t.grad_buf(self);
    if (t.nodes_[ai].requires_grad) {
      Tensor& ga = t.grad_buf(ai);
      for (int i = 0; i < g.numel(); ++i) ga[i] += g[i];
    }
    if (t.nodes_[bi].requires_grad) {
      Tensor& gb = t.grad_buf(bi);
      for (int i = 0; i < g.numel(); ++i) gb[i] -= g[i];
    }
  });
}

Var Tape::mul(Var a, Var b) {
  const Tensor& x = val(a);
  const Tensor& y = val(b);
  check_same_shape(x, y, "mul");
  Tensor out = x;
  for (int i = 0; i < out.numel(); ++i) out[i] *= y[i];
  bool rg = node(a).requires_grad || node(b).requires_grad;
  int ai = a.id, bi = b.id;
  return push(std::move(out), rg, [ai, bi](Tape& t, int self) {
    const Tensor& g = t.grad_buf(self);
    const Tensor& x = t.nodes_[ai].value;
    const Tensor& y = t.nodes_[bi].value;
    if (t.nodes_[ai].requires_grad) {
      Tensor& ga = t.grad_buf(ai);
      for (int i = 0; i < g.numel(); ++i) ga[i] += g[i] * y[i];
    }
    if (t.nodes_[bi].requires_grad) {
      Tensor& gb = t.grad_buf(bi);
      for (int i = 0; i < g.numel(); ++i) gb[i] += g[i] * x[i];
    }
  });
}

Var Tape::scale(Var a, double c) {
  Tensor out = val(a);
  for (int i = 0; i < out.numel(); ++i) out[i] *= c;
  int ai = a.id;
  return push(std::move(out), node(a).requires_grad, [ai, c](Tape& t, int self) {
    if (!t.nodes_[ai].requires_grad) return;
    const Tensor& g = t.grad_buf(self);
    Tensor& ga = t.grad_buf(ai);
    for (int i = 0; i < g.numel(); ++i) ga[i] += c * g[i];
  });
}

Var Tape::add_const(Var a, double c) {
  Tensor out = val(a);
  for (int i = 0; i < out.numel(); ++i) out[i] += c;
  int ai = a.id;
  return push(std::move(out), node(a).requires_grad, [ai](Tape& t, int self) {
    if (!t.nodes_[ai].requires_grad) return;
    const Tensor& g = t.grad_buf(self);
    Tensor& ga = t.grad_buf(ai);
    for (int i = 0; i < g.numel(); ++i) ga[i] += g[i];
  });
}

Var Tape::sigmoid(Var a) {
  Tensor out = val(a);
  for (int i = 0; i < out.numel(); ++i) out[i] = 1.0 / (1.0 + std::exp(-out[i]));
  int ai = a.id;
  return push(std::move(out), node(a).requires_grad, [ai](Tape& t, int self) {
    if (!t.nodes_[ai].requires_grad) return;
    const Tensor& g = t.grad_buf(self);
    const Tensor& y = t.nodes_[static_cast<std::size_t>(self)].value;
    Tensor& ga = t.grad_buf(ai);
    for (int i = 0; i < g.numel(); ++i) ga[i] += g[i] * y[i] * (1.0 - y[i]);
  });
}

Var Tape::tanh(Var a) {
  Tensor out = val(a);
  for (int i = 0; i < out.numel(); ++i) out[i] = std::tanh(out[i]);
  int ai = a.id;
  return push(std::move(out), node(a).requires_grad, [ai](Tape& t, int self) {
    if (!t.nodes_[ai].requires_grad) return;
    const Tensor& g = t.grad_buf(self);
    const Tensor& y = t.nodes_[static_cast<std::size_t>(self)].value;
    Tensor& ga = t.grad_buf(ai);
    for (int i = 0; i < g.numel(); ++i) ga[i] += g[i] * (1.0 - y[i] * y[i]);
  });
}

Var Tape::gelu(Var a) {
  Tensor out = val(a);
  for (int i = 0; i < out.numel(); ++i) out[i] = gelu_fwd(out[i]);
  int ai = a.id;
  return push(std::move(out), node(a).requires_grad, [ai](Tape& t, int self) {
    if (!t.nodes_[ai].requires_grad) return;
    const Tensor& g = t.grad_buf(self);
    const Tensor& x = t.nodes_[ai].value;
    Tensor& ga = t.grad_buf(ai);
    for (int i = 0; i < g.numel(); ++i) ga[i] += g[i] * gelu_grad(x[i]);
  });
}

Var Tape::exp(Var a) {
  Tensor out = val(a);
  for (int i = 0; i < out.numel(); ++i) out[i] = std::exp(out[i]);
  int ai = a.id;
  return push(std::move(out), node(a).requires_grad, [ai](Tape& t, int self) {
    if (!t.nodes_[ai].requires_grad) return;
    const Tensor& g = t.grad_buf(self);
    const Tensor& y = t.nodes_[static_cast<std::size_t>(self)].value;
    Tensor& ga = t.grad_buf(ai);
    for (int i = 0; i < g.numel(); ++i) ga[i] += g[i] * y[i];
  });
}

Var Tape::log(Var a) {
  Tensor out = val(a);
  for (int i = 0; i < out.numel(); ++i) out[i] = std::log(out[i]);
  int ai = a.id;
  return push(std::move(out), node(a).requires_grad, [ai](Tape& t, int self) {
    if (!t.nodes_[ai].requires_grad) return;
    const Tensor& g = t.grad_buf(self);
    const Tensor& x = t.nodes_[ai].value;
    Tensor& ga = t.grad_buf(ai);
    for (int i = 0; i < g.numel(); ++i) ga[i] += g[i] / x[i];
  });
}

Var Tape::square_clamp01(Var a) {
  Tensor out = val(a);
  for (int i = 0; i < out.numel(); ++i) out[i] = std::min(out[i] * out[i], 1.0);
  int ai = a.id;
  return push(std::move(out), node(a).requires_grad, [ai](Tape& t, int self) {
    if (!t.nodes_[ai].requires_grad) return;
    const Tensor& g = t.grad_buf(self);
    const Tensor& x = t.nodes_[ai].value;
    Tensor& ga = t.grad_buf(ai);
    for (int i = 0; i < g.numel(); ++i) {
      if (x[i] * x[i] < 1.0) ga[i] += g[i] * 2.0 * x[i];
    }
  });
}

// --- structure --------------------------------------------------------------

Var Tape::matmul(Var a, Var b) {
  const Tensor& x = val(a);
  const Tensor& y = val(b);
  if (x.ndim() != 2 || y.ndim() != 2 || x.cols() != y.rows()) {
    throw ShapeError("matmul: incompatible shapes " + x.shape_str() + " and " +
                     y.shape_str());
  }
  const int n = x.rows(), k = x.cols(), m = y.cols();
  Tensor out({n, m});
  for (int i = 0; i < n; ++i) {
    for (int l = 0; l < k; ++l) {
      const double xv = x(i, l);
      if (xv == 0.0) continue;
      for (int j = 0; j < m; ++j) out(i, j) += xv * y(l, j);
    }
  }
  bool rg = node(a).requires_grad || node(b).requires_grad;
  int ai = a.id, bi = b.id;
  return push(std::move(out), rg, [ai, bi, n, k, m](Tape& t, int self) {
    const Tensor& g = t.grad_buf(self);
    const Tensor& x = t.nodes_[ai].value;
    const Tensor& y = t.nodes_[bi].value;
    if (t.nodes_[ai].requires_grad) {  // dX = G . Y^T
      Tensor& ga = t.grad_buf(ai);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j) {
          const double gv = g(i, j);
          if (gv == 0.0) continue;
          for (int l = 0; l < k; ++l) ga(i, l) += gv * y(l, j);
        }
    }
    if (t.nodes_[bi].requires_grad) {  // dY = X^T . G
      Tensor& gb = t.grad_buf(bi);
      for (int i = 0; i < n; ++i)
        for (int l = 0; l < k; ++l) {
          const double xv = x(i, l);
          if (xv == 0.0) continue;
          for (int j = 0; j < m; ++j) gb(l, j) += xv * g(i, j);
        }
    }
  });
}

Var Tape::transpose(Var a) {
  const Tensor& x = val(a);
  if (x.ndim() != 2) throw ShapeError("transpose: rank-2 required, got " + x.shape_str());
  const int n = x.rows(), m = x.cols();
  Tensor out({m, n});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) out(j, i) = x(i, j);
  int ai = a.id;
  return push(std::move(out), node(a).requires_grad, [ai, n, m](Tape& t, int self) {
    if (!t.nodes_[ai].requires_grad) return;
    const Tensor& g = t.grad_buf(self);
    Tensor& ga = t.grad_buf(ai);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < m; ++j) ga(i, j) += g(j, i);
  });
}

Var Tape::add_rowvec(Var m, Var v) {
  const Tensor& x = val(m);
  const Tensor& b = val(v);
  if (x.ndim() != 2 || b.ndim() != 1 || x.cols() != b.rows()) {
    throw ShapeError("add_rowvec: shapes " + x.shape_str() + " and " + b.shape_str());
  }
  Tensor out = x;
  for (int i = 0; i < x.rows(); ++i)
    for (int j = 0; j < x.cols(); ++j) out(i, j) += b[j];
  bool rg = node(m).requires_grad || node(v).requires_grad;
  int mi = m.id, vi = v.id;
  return push(std::move(out), rg, [mi, vi](Tape& t, int self) {
    const Tensor& g = t.grad_buf(self);
    if (t.nodes_[mi].requires_grad) {
      Tensor& gm = t.grad_buf(mi);
      for (int i = 0; i < g.numel(); ++i) gm[i] += g[i];
    }
    if (t.nodes_[vi].requires_grad) {
      Tensor& gv = t.grad_buf(vi);
      for (int i = 0; i < g.rows(); ++i)
        for (int j = 0; j < g.cols(); ++j) gv[j] += g(i, j);
    }
  });
}

Var Tape::mul_rowvec(Var m, Var v) {
  const Tensor& x = val(m);
  const Tensor& b = val(v);
  if (x.ndim() != 2 || b.ndim() != 1 || x.cols() != b.rows()) {
    throw ShapeError("mul_rowvec: shapes " + x.shape_str() + " and " + b.shape_str());
  }
  Tensor out = x;
  for (int i = 0; i < x.rows(); ++i)
    for (int j = 0; j < x.cols(); ++j) out(i, j) *= b[j];
  bool rg = node(m).requires_grad || node(v).requires_grad;
  int mi = m.id, vi = v.id;
  return push(std::move(out), rg, [mi, vi](Tape& t, int self) {
    const Tensor& g = t.grad_buf(self);
    const Tensor& x = t.nodes_[mi].value;
    const Tensor& b = t.nodes_[vi].value;
    if (t.nodes_[mi].requires_grad) {
      Tensor& gm = t.grad_buf(mi);
      for (int i = 0; i < g.rows(); ++i)
        for (int j = 0; j < g.cols(); ++j) gm(i, j) += g(i, j) * b[j];
    }
    if (t.nodes_[vi].requires_grad) {
      Tensor& gv = t.grad_buf(vi);
      for (int i = 0; i < g.rows(); ++i)
        for (int j = 0; j < g.cols(); ++j) gv[j] += g(i, j) * x(i, j);
    }
  });
}

Var Tape::concat(Var a, Var b, int axis) {
  const Tensor& x = val(a);
  const Tensor& y = val(b);
  if (x.ndim() != 2 || y.ndim() != 2 || axis < 0 || axis > 1) {
    throw ShapeError("concat: rank-2 tensors and axis 0/1 required");
  }
  if (x.dim(1 - axis) != y.dim(1 - axis)) {
    throw ShapeError("concat: shapes " + x.shape_str() + " and " + y.shape_str());
  }
  Tensor out(axis == 0 ? std::vector<int>{x.rows() + y.rows(), x.cols()}
                       : std::vector<int>{x.rows(), x.cols() + y.cols()});
  if (axis == 0) {
    for (int i = 0; i < x.rows(); ++i)
      for (int j = 0; j < x.cols(); ++j) out(i, j) = x(i, j);
    for (int i = 0; i < y.rows(); ++i)
      for (int j = 0; j < y.cols(); ++j) out(x.rows() + i, j) = y(i, j);
  } else {
    for (int i = 0; i < x.rows(); ++i) {
      for (int j = 0; j < x.cols(); ++j) out(i, j) = x(i, j);
      for (int j = 0; j < y.cols(); ++j) out(i, x.cols() + j) = y(i, j);
    }
  }
  bool rg = node(a).requires_grad || node(b).requires_grad;
  int ai = a.id, bi = b.id;
  const int xr = x.rows(), xc = x.cols(), yr = y.rows(), yc = y.cols();
  return push(std::move(out), rg, [ai, bi, axis, xr, xc, yr, yc](Tape& t, int self) {
    const Tensor& g = t.grad_buf(self);
    if (t.nodes_[ai].requires_grad) {
      Tensor& ga = t.grad_buf(ai);
      for (int i = 0; i < xr; ++i)
        for (int j = 0; j < xc; ++j) ga(i, j) += g(i, j);
    }
    if (t.nodes_[bi].requires_grad) {
      Tensor& gb = t.grad_buf(bi);
      for (int i = 0; i < yr; ++i)
        for (int j = 0; j < yc; ++j)
          gb(i, j) += (axis == 0) ? g(xr + i, j) : g(i, xc + j);
    }
  });
}

Var Tape::stack_rows(const std::vector<Var>& rs) {
  if (rs.empty()) throw ShapeError("stack_rows: empty input");
  const int d = val(rs[0]).numel();
  bool rg = false;
  for (Var r : rs) {
    if (val(r).ndim() != 1 || val(r).numel() != d) {
      throw ShapeError("stack_rows: rows must be rank-1 of equal length");
    }
    rg = rg || node(r).requires_grad;
  }
  Tensor out({static_cast<int>(rs.size()), d});
  for (std::size_t i = 0; i < rs.size(); ++i) {
    const Tensor& r = val(rs[i]);
    for (int j = 0; j < d; ++j) out(static_cast<int>(i), j) = r[j];
  }
  std::vector<int> ids(rs.size());
  for (std::size_t i = 0; i < rs.size(); ++i) ids[i] = rs[i].id;
  return push(std::move(out), rg, [ids, d](Tape& t, int self) {
    const Tensor& g = t.grad_buf(self);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (!t.nodes_[ids[i]].requires_grad) continue;
      Tensor& gr = t.grad_buf(ids[i]);
      for (int j = 0; j < d; ++j) gr[j] += g(static_cast<int>(i), j);
    }
  });
}

Var Tape::concat1d(const std::vector<Var>& xs) {
  if (xs.empty()) throw ShapeError("concat1d: empty input");
  int total = 0;
  bool rg = false;
  for (Var x : xs) {
    if (val(x).ndim() != 1) throw ShapeError("concat1d: rank-1 inputs required");
    total += val(x).numel();
    rg = rg || node(x).requires_grad;
  }
  Tensor out({total});
  int off = 0;
  std::vector<int> ids(xs.size());
  std::vector<int> lens(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const Tensor& x = val(xs[i]);
    for (int j = 0; j < x.numel(); ++j) out[off + j] = x[j];
    ids[i] = xs[i].id;
    lens[i] = x.numel();
    off += x.numel();
  }
  return push(std::move(out), rg, [ids, lens](Tape& t, int self) {
    const Tensor& g = t.grad_buf(self);
    int off = 0;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (t.nodes_[ids[i]].requires_grad) {
        Tensor& gx = t.grad_buf(ids[i]);
        for (int j = 0; j < lens[i]; ++j) gx[j] += g[off + j];
      }
      off += lens[i];
    }
  });
}

Var Tape::row(Var a, int r) {
  const Tensor& x = val(a);
  if (x.ndim() != 2 || r < 0 || r >= x.rows()) {
    throw ShapeError("row: bad index for " + x.shape_str());
  }
  Tensor out({x.cols()});
  for (int j = 0; j < x.cols(); ++j) out[j] = x(r, j);
  int ai = a.id;
  const int cols = x.cols();
  return push(std::move(out), node(a).requires_grad, [ai, r, cols](Tape& t, int self) {
    if (!t.nodes_[ai].requires_grad) return;
    const Tensor& g = t.grad_buf(self);
    Tensor& ga = t.grad_buf(ai);
    for (int j = 0; j < cols; ++j) ga(r, j) += g[j];
  });
}

Var Tape::slice_rows(Var a, int start, int len) {
  const Tensor& x = val(a);
  if (x.ndim() != 2 || start < 0 || len < 0 || start + len > x.rows()) {
    throw ShapeError("slice_rows: bad range for " + x.shape_str());
  }
  Tensor out({len, x.cols()});
  for (int i = 0; i < len; ++i)
    for (int j = 0; j < x.cols(); ++j) out(i, j) = x(start + i, j);
  int ai = a.id;
  const int cols = x.cols();
  return push(std::move(out), node(a).requires_grad,
              [ai, start, len, cols](Tape& t, int self) {
                if (!t.nodes_[ai].requires_grad) return;
                const Tensor& g = t.grad_buf(self);
                Tensor& ga = t.grad_buf(ai);
                for (int i = 0; i < len; ++i)
                  for (int j = 0; j < cols; ++j) ga(start + i, j) += g(i, j);
              });
}

Var Tape::slice_cols(Var a, int start, int len) {
  const Tensor& x = val(a);
  if (x.ndim() != 2 || start < 0 || len < 0 || start + len > x.cols()) {
    throw ShapeError("slice_cols: bad range for " + x.shape_str());
  }
  Tensor out({x.rows(), len});
  for (int i = 0; i < x.rows(); ++i)
    for (int j = 0; j < len; ++j) out(i, j) = x(i, start + j);
  int ai = a.id;
  const int rows = x.rows();
  return push(std::move(out), node(a).requires_grad,
              [ai, start, len, rows](Tape& t, int self) {
                if (!t.nodes_[ai].requires_grad) return;
                const Tensor& g = t.grad_buf(self);
                Tensor& ga = t.grad_buf(ai);
                for (int i = 0; i < rows; ++i)
                  for (int j = 0; j < len; ++j) ga(i, start + j) += g(i, j);
              });
}

Var Tape::slice1d(Var a, int start, int len) {
  const Tensor& x = val(a);
  if (x.ndim() != 1 || start < 0 || len < 0 || start + len > x.numel()) {
    throw ShapeError("slice1d: bad range for " + x.shape_str());
  }
  Tensor out({len});
  for (int j = 0; j < len; ++j) out[j] = x[start + j];
  int ai = a.id;
  return push(std::move(out), node(a).requires_grad, [ai, start, len](Tape& t, int self) {
    if (!t.nodes_[ai].requires_grad) return;
    const Tensor& g = t.grad_buf(self);
    Tensor& ga = t.grad_buf(ai);
    for (int j = 0; j < len; ++j) ga[start + j] += g[j];
  });
}

Var Tape::element(Var a, int r, int c) {
  const Tensor& x = val(a);
  if (x.ndim() != 2 || r < 0 || r >= x.rows() || c < 0 || c >= x.cols()) {
    throw ShapeError("element: bad index for " + x.shape_str());
  }
  int ai = a.id;
  return push(Tensor::scalar(x(r, c)), node(a).requires_grad,
              [ai, r, c](Tape& t, int self) {
                if (!t.nodes_[ai].requires_grad) return;
                t.grad_buf(ai)(r, c) += t.grad_buf(self)[0];
              });
}

Var Tape::reshape(Var a, std::vector<int> shape) {
  const Tensor& x = val(a);
  Tensor out(shape, std::vector<double>(x.data().begin(), x.data().end()));
  int ai = a.id;
  return push(std::move(out), node(a).requires_grad, [ai](Tape& t, int self) {
    if (!t.nodes_[ai].requires_grad) return;
    const Tensor& g = t.grad_buf(self);
    Tensor& ga = t.grad_buf(ai);
    for (int i = 0; i < g.numel(); ++i) ga[i] += g[i];
  });
}

// --- normalization ----------------------------------------------------------

Var Tape::softmax_rows(Var a) {
  const Tensor& x = val(a);
  if (x.ndim() != 2 && x.ndim() != 1) throw ShapeError("softmax_rows: rank 1 or 2");
  const int rows = x.ndim() == 2 ? x.rows() : 1;
  const int cols = x.ndim() == 2 ? x.cols() : x.numel();
  Tensor out = x;
  for (int i = 0; i < rows; ++i) {
    double mx = -1e308;
    for (int j = 0; j < cols; ++j) mx = std::max(mx, out[i * cols + j]);
    double z = 0.0;
    for (int j = 0; j < cols; ++j) {
      double e = std::exp(out[i * cols + j] - mx);
      out[i * cols + j] = e;
      z += e;
    }
    for (int j = 0; j < cols; ++j) out[i * cols + j] /= z;
  }
  int ai = a.id;
  return push(std::move(out), node(a).requires_grad, [ai, rows, cols](Tape& t, int self) {
    if (!t.nodes_[ai].requires_grad) return;
    const Tensor& g = t.grad_buf(self);
    const Tensor& y = t.nodes_[static_cast<std::size_t>(self)].value;
    Tensor& ga = t.grad_buf(ai);
    for (int i = 0; i < rows; ++i) {
      double dot = 0.0;
      for (int j = 0; j < cols; ++j) dot += g[i * cols + j] * y[i * cols + j];
      for (int j = 0; j < cols; ++j)
        ga[i * cols + j] += y[i * cols + j] * (g[i * cols + j] - dot);
    }
  });
}

Var Tape::layernorm_rows(Var a, double eps) {
  const Tensor& x = val(a);
  if (x.ndim() != 2 && x.ndim() != 1) throw ShapeError("layernorm_rows: rank 1 or 2");
  const int rows = x.ndim() == 2 ? x.rows() : 1;
  const int cols = x.ndim() == 2 ? x.cols() : x.numel();
  Tensor out = x;
  std::vector<double> inv_std(static_cast<std::size_t>(rows));
  for (int i = 0; i < rows; ++i) {
    double mu = 0.0;
    for (int j = 0; j < cols; ++j) mu += out[i * cols + j];
    mu /= cols;
    double var = 0.0;
    for (int j = 0; j < cols; ++j) {
      double d = out[i * cols + j] - mu;
      var += d * d;
    }
    var /= cols;
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[static_cast<std::size_t>(i)] = is;
    for (int j = 0; j < cols; ++j) out[i * cols + j] = (out[i * cols + j] - mu) * is;
  }
  int ai = a.id;
  return push(std::move(out), node(a).requires_grad,
              [ai, rows, cols, inv_std](Tape& t, int self) {
                if (!t.nodes_[ai].requires_grad) return;
                const Tensor& g = t.grad_buf(self);
                const Tensor& y = t.nodes_[static_cast<std::size_t>(self)].value;
                Tensor& ga = t.grad_buf(ai);
                for (int i = 0; i < rows; ++i) {
                  double gmean = 0.0, gymean = 0.0;
                  for (int j = 0; j < cols; ++j) {
                    gmean += g[i * cols + j];
                    gymean += g[i * cols + j] * y[i * cols + j];
                  }
                  gmean /= cols;
                  gymean /= cols;
                  const double is = inv_std[static_cast<std::size_t>(i)];
                  for (int j = 0; j < cols; ++j) {
                    ga[i * cols + j] +=
                        is * (g[i * cols + j] - gmean - y[i * cols + j] * gymean);
                  }
                }
              });
}

Var Tape::cumsum0(Var a) {
  const Tensor& x = val(a);
  if (x.ndim() != 2 && x.ndim() != 1) throw ShapeError("cumsum0: rank 1 or 2");
  const int rows = x.ndim() == 2 ? x.rows() : x.numel();
  const int cols = x.ndim() == 2 ? x.cols() : 1;
  Tensor out = x;
  for (int i = 1; i < rows; ++i)
    for (int j = 0; j < cols; ++j) out[i * cols + j] += out[(i - 1) * cols + j];
  int ai = a.id;
  return push(std::move(out), node(a).requires_grad, [ai, rows, cols](Tape& t, int self) {
    if (!t.nodes_[ai].requires_grad) return;
    const Tensor& g = t.grad_buf(self);
    Tensor& ga = t.grad_buf(ai);
    // grad of prefix-sum is suffix-sum
    std::vector<double> acc(static_cast<std::size_t>(cols), 0.0);
    for (int i = rows - 1; i >= 0; --i)
      for (int j = 0; j < cols; ++j) {
        acc[static_cast<std::size_t>(j)] += g[i * cols + j];
        ga[i * cols + j] += acc[static_cast<std::size_t>(j)];
      }
  });
}

// --- reductions and losses ---------------------------------------------------

Var Tape::sum(Var a) {
  const Tensor& x = val(a);
  double s = 0.0;
  for (int i = 0; i < x.numel(); ++i) s += x[i];
  int ai = a.id;
  return push(Tensor::scalar(s), node(a).requires_grad, [ai](Tape& t, int self) {
    if (!t.nodes_[ai].requires_grad) return;
    const double g = t.grad_buf(self)[0];
    Tensor& ga = t.grad_buf(ai);
    for (int i = 0; i < ga.numel(); ++i) ga[i] += g;
  });
}

Var Tape::mean(Var a) {
  const int n = val(a).numel();
  return scale(sum(a), 1.0 / n);
}

Var Tape::sse(Var a, Var b) {
  const Tensor& x = val(a);
  const Tensor& y = val(b);
  check_same_shape(x, y, "sse");
  double s = 0.0;
  for (int i = 0; i < x.numel(); ++i) {
    const double d = x[i] - y[i];
    s += d * d;
  }
  bool rg = node(a).requires_grad || node(b).requires_grad;
  int ai = a.id, bi = b.id;
  return push(Tensor::scalar(s), rg, [ai, bi](Tape& t, int self) {
    const double g = t.grad_buf(self)[0];
    const Tensor& x = t.nodes_[ai].value;
    const Tensor& y = t.nodes_[bi].value;
    if (t.nodes_[ai].requires_grad) {
      Tensor& ga = t.grad_buf(ai);
      for (int i = 0; i < x.numel(); ++i) ga[i] += g * 2.0 * (x[i] - y[i]);
    }
    if (t.nodes_[bi].requires_grad) {
      Tensor& gb = t.grad_buf(bi);
      for (int i = 0; i < x.numel(); ++i) gb[i] -= g * 2.0 * (x[i] - y[i]);
    }
  });
}

Var Tape::bce(Var probs, Var targets) {
  const Tensor& p = val(probs);
  const Tensor& y = val(targets);
  check_same_shape(p, y, "bce");
  const int n = p.numel();
  if (n == 0) throw ShapeError("bce: empty input");
  double s = 0.0;
  for (int i = 0; i < n; ++i) {
    const double pc = std::clamp(p[i], kBceEps, 1.0 - kBceEps);
    s -= y[i] * std::log(pc) + (1.0 - y[i]) * std::log(1.0 - pc);
  }
  bool rg = node(probs).requires_grad || node(targets).requires_grad;
  int pi = probs.id, yi = targets.id;
  return push(Tensor::scalar(s / n), rg, [pi, yi, n](Tape& t, int self) {
    const double g = t.grad_buf(self)[0] / n;
    const Tensor& p = t.nodes_[pi].value;
    const Tensor& y = t.nodes_[yi].value;
    if (t.nodes_[pi].requires_grad) {
      Tensor& gp = t.grad_buf(pi);
      for (int i = 0; i < n; ++i) {
        if (p[i] <= kBceEps || p[i] >= 1.0 - kBceEps) continue;  // clamped: zero slope
        gp[i] += g * (-y[i] / p[i] + (1.0 - y[i]) / (1.0 - p[i]));
      }
    }
    if (t.nodes_[yi].requires_grad) {
      Tensor& gy = t.grad_buf(yi);
      for (int i = 0; i < n; ++i) {
        const double pc = std::clamp(p[i], kBceEps, 1.0 - kBceEps);
        gy[i] += g * (std::log(1.0 - pc) - std::log(pc));
      }
    }
  });
}

void Tape::backward(Var loss) {
  if (!loss.valid() || static_cast<std::size_t>(loss.id) >= nodes_.size()) {
    throw ContractError("backward: invalid loss node");
  }
  if (val(loss).numel() != 1) {
    throw ContractError("backward: loss must be scalar, got " + val(loss).shape_str());
  }
  for (Node& n : nodes_) {
    n.grad = Tensor(n.value.shape());  // zeros; unreachable leaves stay zero
  }
  nodes_[static_cast<std::size_t>(loss.id)].grad[0] = 1.0;
  grads_ready_ = true;
  for (int i = loss.id; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (n.back && n.requires_grad) n.back(*this, i);
  }
}

double grad_check(const std::function<Var(Tape&, Var)>& f, const Tensor& x, double eps) {
  Tensor analytic;
  {
    Tape t;
    Var xv = t.leaf(x);
    Var loss = f(t, xv);
    t.backward(loss);
    analytic = t.grad(xv);
  }
  double worst = 0.0;
  for (int i = 0; i < x.numel(); ++i) {
    Tensor xp = x, xm = x;
    xp[i] += eps;
    xm[i] -= eps;
    double fp, fm;
    {
      Tape t;
      fp = t.val(f(t, t.leaf(xp, false)))[0];
    }
    {
      Tape t;
      fm = t.val(f(t, t.leaf(xm, false)))[0];
    }
    const double numeric = (fp - fm) / (2.0 * eps);
    const double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i]));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace sigcast
