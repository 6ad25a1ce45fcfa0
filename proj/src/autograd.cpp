#include "mama/autograd.hpp"

#include <algorithm>
#include <cmath>

#include "mama/errors.hpp"
#include "mama/kernels.hpp"

namespace mama::ad {

namespace {
const Matrix kEmpty;
}

const Matrix& Var::value() const { return tape_->value(id_); }
const Matrix& Var::grad() const { return tape_->grad(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

double Var::scalar() const {
  const Matrix& v = value();
  if (v.size() != 1) throw ShapeError("scalar() on " + v.shape_string() + " node");
  return v[0];
}

Var Tape::constant(Matrix value) {
  Node n;
  n.own = std::move(value);
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

Var Tape::variable(Matrix value) {
  Node n;
  n.own = std::move(value);
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

Var Tape::external(const Matrix& value, bool requires_grad) {
  Node n;
  n.external = &value;
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

Var Tape::record(Matrix value, std::initializer_list<Var> inputs, Backward fn) {
  return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                std::move(fn));
}

Var Tape::record(Matrix value, std::span<const Var> inputs, Backward fn) {
  Node n;
  n.own = std::move(value);
  for (const Var& v : inputs) {
    if (&v.tape() != this) throw InputError("autograd: mixing nodes from different tapes");
    n.requires_grad = n.requires_grad || nodes_[v.id()].requires_grad;
  }
  if (n.requires_grad) n.fn = std::move(fn);
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

const Matrix& Tape::value(std::size_t id) const {
  const Node& n = nodes_[id];
  return n.external ? *n.external : n.own;
}

const Matrix& Tape::grad(std::size_t id) const { return nodes_[id].grad; }

Matrix& Tape::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) {
    const Matrix& v = value(id);
    n.grad = Matrix(v.rows(), v.cols());
  }
  return n.grad;
}

void Tape::accumulate(std::size_t id, const Matrix& delta) {
  if (!nodes_[id].requires_grad) return;
  Matrix& g = grad_buffer(id);
  require_same_shape(g, delta, "autograd accumulate");
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += delta[i];
}

void Tape::backward(Var root) {
  if (root.value().size() != 1)
    throw ShapeError("backward() needs a 1x1 root, got " + root.value().shape_string());
  Matrix seed(1, 1, 1.0);
  backward(std::span<const Var>(&root, 1), std::span<const Matrix>(&seed, 1));
}

void Tape::backward(std::span<const Var> roots, std::span<const Matrix> seeds) {
  if (roots.size() != seeds.size()) throw InputError("backward: roots/seeds size mismatch");
  std::size_t top = 0;
  for (std::size_t i = 0; i < roots.size(); ++i) {
    accumulate(roots[i].id(), seeds[i]);
    top = std::max(top, roots[i].id());
  }
  propagate(top);
}

void Tape::propagate(std::size_t from) {
  for (std::size_t id = from + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.fn || n.grad.empty()) continue;
    n.fn(*this, id);
  }
}

// ---- ops -------------------------------------------------------------------

Var matmul(Var a, Var b) {
  Tape& t = a.tape();
  return t.record(kernels::matmul(a.value(), b.value()), {a, b},
                  [ia = a.id(), ib = b.id()](Tape& t, std::size_t self) {
                    const Matrix& g = t.grad(self);
                    if (t.requires_grad(ia)) kernels::gemm_nt(g, t.value(ib), t.grad_buffer(ia), true);
                    if (t.requires_grad(ib)) kernels::gemm_tn(t.value(ia), g, t.grad_buffer(ib), true);
                  });
}

Var matmul_nt(Var a, Var b) {
  Tape& t = a.tape();
  return t.record(kernels::matmul_nt(a.value(), b.value()), {a, b},
                  [ia = a.id(), ib = b.id()](Tape& t, std::size_t self) {
                    const Matrix& g = t.grad(self);
                    if (t.requires_grad(ia)) kernels::gemm(g, t.value(ib), t.grad_buffer(ia), true);
                    if (t.requires_grad(ib)) kernels::gemm_tn(g, t.value(ia), t.grad_buffer(ib), true);
                  });
}

Var add(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "add");
  Matrix out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return a.tape().record(std::move(out), {a, b}, [ia = a.id(), ib = b.id()](Tape& t, std::size_t self) {
    t.accumulate(ia, t.grad(self));
    t.accumulate(ib, t.grad(self));
  });
}

Var sub(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "sub");
  Matrix out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return a.tape().record(std::move(out), {a, b}, [ia = a.id(), ib = b.id()](Tape& t, std::size_t self) {
    t.accumulate(ia, t.grad(self));
    if (t.requires_grad(ib)) {
      Matrix& gb = t.grad_buffer(ib);
      const Matrix& g = t.grad(self);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

Var mul(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "mul");
  Matrix out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return a.tape().record(std::move(out), {a, b}, [ia = a.id(), ib = b.id()](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    if (t.requires_grad(ia)) {
      Matrix& ga = t.grad_buffer(ia);
      const Matrix& bv = t.value(ib);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (t.requires_grad(ib)) {
      Matrix& gb = t.grad_buffer(ib);
      const Matrix& av = t.value(ia);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

Var add_bias(Var a, Var bias) {
  const Matrix& av = a.value();
  const Matrix& bv = bias.value();
  if (bv.rows() != 1 || bv.cols() != av.cols())
    throw ShapeError("add_bias: " + av.shape_string() + " with bias " + bv.shape_string());
  Matrix out = av;
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) += bv[c];
  return a.tape().record(std::move(out), {a, bias},
                         [ia = a.id(), ib = bias.id()](Tape& t, std::size_t self) {
                           const Matrix& g = t.grad(self);
                           t.accumulate(ia, g);
                           if (t.requires_grad(ib)) {
                             Matrix& gb = t.grad_buffer(ib);
                             for (std::size_t r = 0; r < g.rows(); ++r)
                               for (std::size_t c = 0; c < g.cols(); ++c) gb[c] += g(r, c);
                           }
                         });
}

Var add_const(Var a, const Matrix& c) {
  require_same_shape(a.value(), c, "add_const");
  Matrix out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += c[i];
  return a.tape().record(std::move(out), {a}, [ia = a.id()](Tape& t, std::size_t self) {
    t.accumulate(ia, t.grad(self));
  });
}

Var scale(Var a, double c) {
  Matrix out = a.value();
  for (double& v : out.values()) v *= c;
  return a.tape().record(std::move(out), {a}, [ia = a.id(), c](Tape& t, std::size_t self) {
    Matrix& ga = t.grad_buffer(ia);
    const Matrix& g = t.grad(self);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += c * g[i];
  });
}

Var div_scalar(Var a, Var s) {
  const double sv = s.scalar();
  Matrix out = a.value();
  for (double& v : out.values()) v /= sv;
  return a.tape().record(std::move(out), {a, s}, [ia = a.id(), is = s.id()](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    const double sv = t.value(is)[0];
    if (t.requires_grad(ia)) {
      Matrix& ga = t.grad_buffer(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / sv;
    }
    if (t.requires_grad(is)) {
      const Matrix& av = t.value(ia);
      double acc = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * av[i];
      t.grad_buffer(is)[0] -= acc / (sv * sv);
    }
  });
}

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;
}  // namespace

Var gelu(Var a) {
  Matrix out = a.value();
  for (double& x : out.values()) x = 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x)));
  return a.tape().record(std::move(out), {a}, [ia = a.id()](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    const Matrix& x = t.value(ia);
    Matrix& ga = t.grad_buffer(ia);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = x[i];
      const double th = std::tanh(kGeluC * (v + kGeluA * v * v * v));
      const double d = 0.5 * (1.0 + th) +
                       0.5 * v * (1.0 - th * th) * kGeluC * (1.0 + 3.0 * kGeluA * v * v);
      ga[i] += g[i] * d;
    }
  });
}

Var layer_norm(Var a, Var gamma, Var beta, double eps) {
  const Matrix& x = a.value();
  const std::size_t n = x.cols();
  if (gamma.value().size() != n || beta.value().size() != n)
    throw ShapeError("layer_norm: parameter width mismatch for " + x.shape_string());
  Matrix xhat(x.rows(), n);
  std::vector<double> inv_std(x.rows());
  Matrix out(x.rows(), n);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double mean = 0.0;
    for (double v : x.row(r)) mean += v;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double v : x.row(r)) var += (v - mean) * (v - mean);
    var /= static_cast<double>(n);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < n; ++c) {
      xhat(r, c) = (x(r, c) - mean) * inv_std[r];
      out(r, c) = xhat(r, c) * gamma.value()[c] + beta.value()[c];
    }
  }
  return a.tape().record(
      std::move(out), {a, gamma, beta},
      [ia = a.id(), ig = gamma.id(), ib = beta.id(), xhat = std::move(xhat),
       inv_std = std::move(inv_std)](Tape& t, std::size_t self) {
        const Matrix& g = t.grad(self);
        const Matrix& gam = t.value(ig);
        const std::size_t n = g.cols();
        if (t.requires_grad(ig) || t.requires_grad(ib)) {
          Matrix dgam(1, n), dbeta(1, n);
          for (std::size_t r = 0; r < g.rows(); ++r)
            for (std::size_t c = 0; c < n; ++c) {
              dgam[c] += g(r, c) * xhat(r, c);
              dbeta[c] += g(r, c);
            }
          t.accumulate(ig, dgam);
          t.accumulate(ib, dbeta);
        }
        if (!t.requires_grad(ia)) return;
        Matrix& ga = t.grad_buffer(ia);
        std::vector<double> dxhat(n);
        for (std::size_t r = 0; r < g.rows(); ++r) {
          double mean_d = 0.0, mean_dx = 0.0;
          for (std::size_t c = 0; c < n; ++c) {
            dxhat[c] = g(r, c) * gam[c];
            mean_d += dxhat[c];
            mean_dx += dxhat[c] * xhat(r, c);
          }
          mean_d /= static_cast<double>(n);
          mean_dx /= static_cast<double>(n);
          for (std::size_t c = 0; c < n; ++c)
            ga(r, c) += inv_std[r] * (dxhat[c] - mean_d - xhat(r, c) * mean_dx);
        }
      });
}

Var softmax_rows(Var a) {
  Matrix y = a.value();
  for (std::size_t r = 0; r < y.rows(); ++r) {
    auto row = y.row(r);
    const double m = *std::max_element(row.begin(), row.end());
    double s = 0.0;
    for (double& v : row) {
      v = std::exp(v - m);
      s += v;
    }
    for (double& v : row) v /= s;
  }
  return a.tape().record(y, {a}, [ia = a.id(), y](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    Matrix& ga = t.grad_buffer(ia);
    for (std::size_t r = 0; r < y.rows(); ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < y.cols(); ++c) dot += g(r, c) * y(r, c);
      for (std::size_t c = 0; c < y.cols(); ++c) ga(r, c) += y(r, c) * (g(r, c) - dot);
    }
  });
}

Var log_softmax_rows(Var a) {
  Matrix y = a.value();
  Matrix p(y.rows(), y.cols());
  for (std::size_t r = 0; r < y.rows(); ++r) {
    auto row = y.row(r);
    const double m = *std::max_element(row.begin(), row.end());
    double s = 0.0;
    for (double v : row) s += std::exp(v - m);
    const double lse = m + std::log(s);
    for (std::size_t c = 0; c < y.cols(); ++c) {
      row[c] -= lse;
      p(r, c) = std::exp(row[c]);
    }
  }
  return a.tape().record(std::move(y), {a}, [ia = a.id(), p = std::move(p)](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    Matrix& ga = t.grad_buffer(ia);
    for (std::size_t r = 0; r < p.rows(); ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < p.cols(); ++c) s += g(r, c);
      for (std::size_t c = 0; c < p.cols(); ++c) ga(r, c) += g(r, c) - p(r, c) * s;
    }
  });
}

Var transpose(Var a) {
  return a.tape().record(a.value().transposed(), {a}, [ia = a.id()](Tape& t, std::size_t self) {
    t.accumulate(ia, t.grad(self).transposed());
  });
}

Var normalize_rows(Var a) {
  const Matrix& x = a.value();
  Matrix y = x;
  std::vector<double> norms(x.rows());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double s = 0.0;
    for (double v : x.row(r)) s += v * v;
    norms[r] = std::sqrt(s);
    if (!(norms[r] > 0.0) || !std::isfinite(norms[r]))
      throw NumericError("normalize_rows: row " + std::to_string(r) + " has norm " +
                         std::to_string(norms[r]));
    for (double& v : y.row(r)) v /= norms[r];
  }
  return a.tape().record(y, {a}, [ia = a.id(), y, norms = std::move(norms)](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    Matrix& ga = t.grad_buffer(ia);
    for (std::size_t r = 0; r < y.rows(); ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < y.cols(); ++c) dot += y(r, c) * g(r, c);
      for (std::size_t c = 0; c < y.cols(); ++c) ga(r, c) += (g(r, c) - y(r, c) * dot) / norms[r];
    }
  });
}

Var mean_rows(Var a) {
  const Matrix& x = a.value();
  if (x.rows() == 0) throw ShapeError("mean_rows on empty matrix");
  Matrix out(1, x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < x.cols(); ++c) out[c] += x(r, c);
  const double inv = 1.0 / static_cast<double>(x.rows());
  for (double& v : out.values()) v *= inv;
  return a.tape().record(std::move(out), {a}, [ia = a.id(), inv](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    Matrix& ga = t.grad_buffer(ia);
    for (std::size_t r = 0; r < ga.rows(); ++r)
      for (std::size_t c = 0; c < ga.cols(); ++c) ga(r, c) += g[c] * inv;
  });
}

Var sum_all(Var a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  return a.tape().record(Matrix(1, 1, s), {a}, [ia = a.id()](Tape& t, std::size_t self) {
    const double g = t.grad(self)[0];
    Matrix& ga = t.grad_buffer(ia);
    for (double& v : ga.values()) v += g;
  });
}

Var mean_all(Var a) {
  if (a.value().empty()) throw ShapeError("mean_all on empty matrix");
  return scale(sum_all(a), 1.0 / static_cast<double>(a.value().size()));
}

Var gather_rows(Var a, std::span<const std::size_t> rows) {
  const Matrix& x = a.value();
  Matrix out(rows.size(), x.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= x.rows())
      throw ShapeError("gather_rows: index " + std::to_string(rows[i]) + " out of " +
                       std::to_string(x.rows()));
    std::copy(x.row(rows[i]).begin(), x.row(rows[i]).end(), out.row(i).begin());
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return a.tape().record(std::move(out), {a}, [ia = a.id(), idx = std::move(idx)](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    Matrix& ga = t.grad_buffer(ia);
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t c = 0; c < g.cols(); ++c) ga(idx[i], c) += g(i, c);
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no parts");
  const std::size_t cols = parts.front().cols();
  std::size_t rows = 0;
  for (const Var& p : parts) {
    if (p.cols() != cols) throw ShapeError("concat_rows: column mismatch");
    rows += p.rows();
  }
  Matrix out(rows, cols);
  std::vector<std::size_t> ids, offsets;
  std::size_t off = 0;
  for (const Var& p : parts) {
    std::copy(p.value().values().begin(), p.value().values().end(), out.data() + off * cols);
    ids.push_back(p.id());
    offsets.push_back(off);
    off += p.rows();
  }
  return parts.front().tape().record(
      std::move(out), parts, [ids = std::move(ids), offsets = std::move(offsets)](Tape& t, std::size_t self) {
        const Matrix& g = t.grad(self);
        for (std::size_t k = 0; k < ids.size(); ++k) {
          if (!t.requires_grad(ids[k])) continue;
          Matrix& gp = t.grad_buffer(ids[k]);
          const double* src = g.data() + offsets[k] * g.cols();
          for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += src[i];
        }
      });
}

Var diagonal(Var a) {
  const Matrix& x = a.value();
  const std::size_t n = std::min(x.rows(), x.cols());
  Matrix out(n, 1);
  for (std::size_t i = 0; i < n; ++i) out[i] = x(i, i);
  return a.tape().record(std::move(out), {a}, [ia = a.id()](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    Matrix& ga = t.grad_buffer(ia);
    for (std::size_t i = 0; i < g.rows(); ++i) ga(i, i) += g[i];
  });
}

Var row_dot(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "row_dot");
  const Matrix& x = a.value();
  const Matrix& y = b.value();
  Matrix out(x.rows(), 1);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < x.cols(); ++c) s += x(r, c) * y(r, c);
    out[r] = s;
  }
  return a.tape().record(std::move(out), {a, b}, [ia = a.id(), ib = b.id()](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    const Matrix& x = t.value(ia);
    const Matrix& y = t.value(ib);
    if (t.requires_grad(ia)) {
      Matrix& ga = t.grad_buffer(ia);
      for (std::size_t r = 0; r < x.rows(); ++r)
        for (std::size_t c = 0; c < x.cols(); ++c) ga(r, c) += g[r] * y(r, c);
    }
    if (t.requires_grad(ib)) {
      Matrix& gb = t.grad_buffer(ib);
      for (std::size_t r = 0; r < x.rows(); ++r)
        for (std::size_t c = 0; c < x.cols(); ++c) gb(r, c) += g[r] * x(r, c);
    }
  });
}

Var with_diagonal(Var a, Var diag) {
  const Matrix& x = a.value();
  const std::size_t n = std::min(x.rows(), x.cols());
  if (diag.value().size() != n) throw ShapeError("with_diagonal: diagonal length mismatch");
  Matrix out = x;
  for (std::size_t i = 0; i < n; ++i) out(i, i) = diag.value()[i];
  return a.tape().record(std::move(out), {a, diag}, [ia = a.id(), id = diag.id(), n](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    if (t.requires_grad(ia)) {
      Matrix& ga = t.grad_buffer(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      for (std::size_t i = 0; i < n; ++i) ga(i, i) -= g(i, i);
    }
    if (t.requires_grad(id)) {
      Matrix& gd = t.grad_buffer(id);
      for (std::size_t i = 0; i < n; ++i) gd[i] += g(i, i);
    }
  });
}

Var linear(Var x, Var weight, Var bias) { return add_bias(matmul_nt(x, weight), bias); }

}  // namespace mama::ad
