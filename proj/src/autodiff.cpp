#include "mtnet/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <utility>

#include "mtnet/errors.hpp"
#include "mtnet/kernels.hpp"

namespace mtnet::ad {

namespace {

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a) + " vs " + to_string(b));
}

Tape& same_tape(const char* op, Var a, Var b) {
  if (!a.valid() || !b.valid() || &a.tape() != &b.tape()) {
    throw Error(std::string(op) + ": operands recorded on different tapes");
  }
  return a.tape();
}

Tape& tape_of(const char* op, std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError(std::string(op) + ": no operands");
  Tape& t = parts.front().tape();
  for (const Var& v : parts) {
    if (!v.valid() || &v.tape() != &t) {
      throw Error(std::string(op) + ": operands recorded on different tapes");
    }
  }
  return t;
}

std::vector<Real> copy_of(std::span<const Real> s) { return {s.begin(), s.end()}; }

Real stable_sigmoid(Real x) {
  if (x >= 0) return Real{1} / (Real{1} + std::exp(-x));
  const Real e = std::exp(x);
  return e / (Real{1} + e);
}

// Applies y = f(x) elementwise with dy/dx = df(x, y).
template <typename F, typename DF>
Var unary(const char* op, Var a, F f, DF df) {
  Tape& t = a.tape();
  const auto x = a.value();
  std::vector<Real> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  const std::uint32_t ai = a.index();
  return t.record(op, a.shape(), std::move(y), {a}, [ai, df](Tape& tp, std::uint32_t self) {
    const auto g = tp.grad_buffer(self);
    const auto xv = tp.value(ai);
    const auto yv = tp.value(self);
    auto ga = tp.grad_buffer(ai);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * df(xv[i], yv[i]);
  });
}

}  // namespace

std::string to_string(const Shape& s) {
  return std::to_string(s.rows) + "x" + std::to_string(s.cols);
}

// ---- Tensor ---------------------------------------------------------------

Tensor::Tensor(std::size_t rows, std::size_t cols, Real fill)
    : shape_{rows, cols}, data_(rows * cols, fill) {}

Tensor::Tensor(std::size_t rows, std::size_t cols, std::vector<Real> values)
    : shape_{rows, cols}, data_(std::move(values)) {
  if (data_.size() != rows * cols) {
    throw ShapeError("Tensor: " + std::to_string(data_.size()) + " values for shape " +
                     to_string(shape_));
  }
}

Tensor Tensor::row(std::vector<Real> values) {
  const std::size_t n = values.size();
  return Tensor(1, n, std::move(values));
}

Tensor Tensor::identity(std::size_t n) {
  Tensor t(n, n);
  for (std::size_t i = 0; i < n; ++i) t(i, i) = 1;
  return t;
}

void Tensor::set_requires_grad(bool on) {
  requires_grad_ = on;
  if (on) {
    grad_.assign(data_.size(), Real{0});
  } else {
    grad_.clear();
  }
}

void Tensor::zero_grad() { std::fill(grad_.begin(), grad_.end(), Real{0}); }

// ---- Var ------------------------------------------------------------------

Shape Var::shape() const { return tape_->shape(index_); }
std::span<const Real> Var::value() const { return tape_->value(index_); }

Real Var::item() const {
  if (shape().size() != 1) throw ShapeError("item: expected 1x1, got " + to_string(shape()));
  return value()[0];
}

Tensor Var::to_tensor() const {
  const Shape s = shape();
  return Tensor(s.rows, s.cols, copy_of(value()));
}

// ---- Tape -----------------------------------------------------------------

Var Tape::push(Node node) {
  if (nodes_.size() >= std::numeric_limits<std::uint32_t>::max()) {
    throw Error("tape: too many nodes");
  }
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Tape::constant(Tensor value) {
  Node n;
  n.op = "constant";
  n.shape = value.shape();
  n.owned.assign(value.data().begin(), value.data().end());
  return push(std::move(n));
}

Var Tape::variable(Tensor value) {
  Node n;
  n.op = "variable";
  n.shape = value.shape();
  n.owned.assign(value.data().begin(), value.data().end());
  n.needs_grad = record_grad_;
  return push(std::move(n));
}

Var Tape::param(Tensor& p) {
  return param(static_cast<const Tensor&>(p), p.requires_grad() ? p.grad() : std::span<Real>{});
}

Var Tape::param(const Tensor& p, std::span<Real> sink) {
  if (!sink.empty() && sink.size() != p.size()) {
    throw ShapeError("param: gradient sink of size " + std::to_string(sink.size()) +
                     " for tensor " + to_string(p.shape()));
  }
  Node n;
  n.op = "param";
  n.shape = p.shape();
  n.external = p.data().data();
  n.needs_grad = record_grad_ && !sink.empty();
  n.grad_sink = sink.empty() ? nullptr : sink.data();
  return push(std::move(n));
}

std::span<const Real> Tape::value(std::uint32_t i) const {
  const Node& n = nodes_[i];
  if (n.external) return {n.external, n.shape.size()};
  return n.owned;
}

std::span<Real> Tape::grad_buffer(std::uint32_t i) {
  Node& n = nodes_[i];
  if (n.grad_sink) return {n.grad_sink, n.shape.size()};
  if (n.grad.empty()) n.grad.assign(n.shape.size(), Real{0});
  return n.grad;
}

Var Tape::record(const char* op, Shape shape, std::vector<Real> value,
                 std::initializer_list<Var> inputs, Backward backward) {
  return record(op, shape, std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                std::move(backward));
}

Var Tape::record(const char* op, Shape shape, std::vector<Real> value,
                 std::span<const Var> inputs, Backward backward) {
  if (value.size() != shape.size()) {
    throw ShapeError(std::string(op) + ": produced " + std::to_string(value.size()) +
                     " values for shape " + to_string(shape));
  }
  Node n;
  n.op = op;
  n.shape = shape;
  n.owned = std::move(value);
  if (record_grad_) {
    for (const Var& in : inputs) {
      if (nodes_[in.index()].needs_grad) {
        n.needs_grad = true;
        break;
      }
    }
  }
  if (n.needs_grad) n.backward = std::move(backward);
  return push(std::move(n));
}

void Tape::backward(Var loss) {
  if (&loss.tape() != this) throw Error("backward: loss recorded on another tape");
  if (loss.shape().size() != 1) {
    throw ShapeError("backward: loss must be scalar (1x1), got " + to_string(loss.shape()));
  }
  if (backward_done_) throw Error("backward: already run on this tape");
  backward_done_ = true;
  if (!nodes_[loss.index()].needs_grad) return;
  grad_buffer(loss.index())[0] += Real{1};
  for (std::uint32_t i = loss.index() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.backward) continue;
    // Nodes that received no gradient do not influence the loss.
    if (n.grad.empty()) continue;
    n.backward(*this, i);
  }
}

std::span<const Real> Tape::grad(Var v) const {
  const Node& n = nodes_[v.index()];
  if (n.grad_sink) return {n.grad_sink, n.shape.size()};
  return n.grad;
}

std::map<std::string, std::size_t> Tape::op_counts() const {
  std::map<std::string, std::size_t> counts;
  for (const Node& n : nodes_) ++counts[n.op];
  return counts;
}

// ---- primitives -------------------------------------------------------------

Var matmul(Var a, Var b) {
  Tape& t = same_tape("matmul", a, b);
  const Shape sa = a.shape();
  const Shape sb = b.shape();
  if (sa.cols != sb.rows) shape_error("matmul", sa, sb);
  const std::size_t m = sa.rows, k = sa.cols, n = sb.cols;
  std::vector<Real> c(m * n);
  kernels::gemm(kernels::Trans::No, kernels::Trans::No, m, n, k, a.value().data(),
                b.value().data(), c.data(), false);
  const std::uint32_t ai = a.index(), bi = b.index();
  return t.record("matmul", {m, n}, std::move(c), {a, b},
                  [ai, bi, m, n, k](Tape& tp, std::uint32_t self) {
                    const Real* g = tp.grad_buffer(self).data();
                    if (tp.needs_grad(ai)) {
                      kernels::gemm(kernels::Trans::No, kernels::Trans::Yes, m, k, n, g,
                                    tp.value(bi).data(), tp.grad_buffer(ai).data(), true);
                    }
                    if (tp.needs_grad(bi)) {
                      kernels::gemm(kernels::Trans::Yes, kernels::Trans::No, k, n, m,
                                    tp.value(ai).data(), g, tp.grad_buffer(bi).data(), true);
                    }
                  });
}

Var transpose(Var a) {
  Tape& t = a.tape();
  const Shape s = a.shape();
  const auto x = a.value();
  std::vector<Real> y(s.size());
  for (std::size_t r = 0; r < s.rows; ++r)
    for (std::size_t c = 0; c < s.cols; ++c) y[c * s.rows + r] = x[r * s.cols + c];
  const std::uint32_t ai = a.index();
  return t.record("transpose", {s.cols, s.rows}, std::move(y), {a},
                  [ai, s](Tape& tp, std::uint32_t self) {
                    const auto g = tp.grad_buffer(self);
                    auto ga = tp.grad_buffer(ai);
                    for (std::size_t r = 0; r < s.rows; ++r)
                      for (std::size_t c = 0; c < s.cols; ++c)
                        ga[r * s.cols + c] += g[c * s.rows + r];
                  });
}

namespace {

Var add_sub(const char* op, Var a, Var b, Real sign) {
  Tape& t = same_tape(op, a, b);
  const Shape sa = a.shape();
  const Shape sb = b.shape();
  const bool broadcast = sb.rows == 1 && sa.rows != 1 && sb.cols == sa.cols;
  if (!(sa == sb) && !broadcast) shape_error(op, sa, sb);
  const auto x = a.value();
  const auto y = b.value();
  std::vector<Real> z(sa.size());
  for (std::size_t r = 0; r < sa.rows; ++r) {
    const std::size_t boff = broadcast ? 0 : r * sa.cols;
    for (std::size_t c = 0; c < sa.cols; ++c) {
      z[r * sa.cols + c] = x[r * sa.cols + c] + sign * y[boff + c];
    }
  }
  const std::uint32_t ai = a.index(), bi = b.index();
  return t.record(op, sa, std::move(z), {a, b},
                  [ai, bi, sa, broadcast, sign](Tape& tp, std::uint32_t self) {
                    const auto g = tp.grad_buffer(self);
                    if (tp.needs_grad(ai)) {
                      auto ga = tp.grad_buffer(ai);
                      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                    }
                    if (tp.needs_grad(bi)) {
                      auto gb = tp.grad_buffer(bi);
                      for (std::size_t r = 0; r < sa.rows; ++r) {
                        const std::size_t boff = broadcast ? 0 : r * sa.cols;
                        for (std::size_t c = 0; c < sa.cols; ++c) {
                          gb[boff + c] += sign * g[r * sa.cols + c];
                        }
                      }
                    }
                  });
}

}  // namespace

Var add(Var a, Var b) { return add_sub("add", a, b, Real{1}); }
Var sub(Var a, Var b) { return add_sub("sub", a, b, Real{-1}); }

Var mul(Var a, Var b) {
  Tape& t = same_tape("mul", a, b);
  const Shape s = a.shape();
  if (!(s == b.shape())) shape_error("mul", s, b.shape());
  const auto x = a.value();
  const auto y = b.value();
  std::vector<Real> z(s.size());
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = x[i] * y[i];
  const std::uint32_t ai = a.index(), bi = b.index();
  return t.record("mul", s, std::move(z), {a, b}, [ai, bi](Tape& tp, std::uint32_t self) {
    const auto g = tp.grad_buffer(self);
    if (tp.needs_grad(ai)) {
      const auto yv = tp.value(bi);
      auto ga = tp.grad_buffer(ai);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * yv[i];
    }
    if (tp.needs_grad(bi)) {
      const auto xv = tp.value(ai);
      auto gb = tp.grad_buffer(bi);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * xv[i];
    }
  });
}

Var scale(Var a, Real s) {
  return unary("scale", a, [s](Real x) { return s * x; }, [s](Real, Real) { return s; });
}

Var concat_cols(std::initializer_list<Var> parts) {
  return concat_cols(std::span<const Var>(parts.begin(), parts.size()));
}

Var concat_cols(std::span<const Var> parts) {
  Tape& t = tape_of("concat_cols", parts);
  const std::size_t rows = parts.front().rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const Var& p : parts) {
    if (p.rows() != rows) shape_error("concat_cols", parts.front().shape(), p.shape());
    widths.push_back(p.cols());
    total += p.cols();
  }
  std::vector<Real> y(rows * total);
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto x = parts[k].value();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(x.begin() + r * widths[k], widths[k], y.begin() + r * total + off);
    off += widths[k];
  }
  std::vector<std::uint32_t> ids;
  for (const Var& p : parts) ids.push_back(p.index());
  return t.record("concat_cols", {rows, total}, std::move(y), parts,
                  [ids, widths, rows, total](Tape& tp, std::uint32_t self) {
                    const auto g = tp.grad_buffer(self);
                    std::size_t o = 0;
                    for (std::size_t k = 0; k < ids.size(); ++k) {
                      if (tp.needs_grad(ids[k])) {
                        auto gk = tp.grad_buffer(ids[k]);
                        for (std::size_t r = 0; r < rows; ++r)
                          for (std::size_t c = 0; c < widths[k]; ++c)
                            gk[r * widths[k] + c] += g[r * total + o + c];
                      }
                      o += widths[k];
                    }
                  });
}

Var concat_rows(std::span<const Var> parts) {
  Tape& t = tape_of("concat_rows", parts);
  const std::size_t cols = parts.front().cols();
  std::size_t rows = 0;
  std::vector<std::size_t> heights;
  for (const Var& p : parts) {
    if (p.cols() != cols) shape_error("concat_rows", parts.front().shape(), p.shape());
    heights.push_back(p.rows());
    rows += p.rows();
  }
  std::vector<Real> y;
  y.reserve(rows * cols);
  for (const Var& p : parts) {
    const auto x = p.value();
    y.insert(y.end(), x.begin(), x.end());
  }
  std::vector<std::uint32_t> ids;
  for (const Var& p : parts) ids.push_back(p.index());
  return t.record("concat_rows", {rows, cols}, std::move(y), parts,
                  [ids, heights, cols](Tape& tp, std::uint32_t self) {
                    const auto g = tp.grad_buffer(self);
                    std::size_t o = 0;
                    for (std::size_t k = 0; k < ids.size(); ++k) {
                      const std::size_t n = heights[k] * cols;
                      if (tp.needs_grad(ids[k])) {
                        auto gk = tp.grad_buffer(ids[k]);
                        for (std::size_t i = 0; i < n; ++i) gk[i] += g[o + i];
                      }
                      o += n;
                    }
                  });
}

Var slice_rows(Var a, std::size_t begin, std::size_t count) {
  Tape& t = a.tape();
  const Shape s = a.shape();
  if (begin + count > s.rows) {
    throw ShapeError("slice_rows: rows [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") out of " + to_string(s));
  }
  const auto x = a.value();
  std::vector<Real> y(x.begin() + begin * s.cols, x.begin() + (begin + count) * s.cols);
  const std::uint32_t ai = a.index();
  return t.record("slice_rows", {count, s.cols}, std::move(y), {a},
                  [ai, begin, s](Tape& tp, std::uint32_t self) {
                    const auto g = tp.grad_buffer(self);
                    auto ga = tp.grad_buffer(ai);
                    for (std::size_t i = 0; i < g.size(); ++i) ga[begin * s.cols + i] += g[i];
                  });
}

Var slice_cols(Var a, std::size_t begin, std::size_t count) {
  Tape& t = a.tape();
  const Shape s = a.shape();
  if (begin + count > s.cols) {
    throw ShapeError("slice_cols: cols [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") out of " + to_string(s));
  }
  const auto x = a.value();
  std::vector<Real> y(s.rows * count);
  for (std::size_t r = 0; r < s.rows; ++r)
    std::copy_n(x.begin() + r * s.cols + begin, count, y.begin() + r * count);
  const std::uint32_t ai = a.index();
  return t.record("slice_cols", {s.rows, count}, std::move(y), {a},
                  [ai, begin, count, s](Tape& tp, std::uint32_t self) {
                    const auto g = tp.grad_buffer(self);
                    auto ga = tp.grad_buffer(ai);
                    for (std::size_t r = 0; r < s.rows; ++r)
                      for (std::size_t c = 0; c < count; ++c)
                        ga[r * s.cols + begin + c] += g[r * count + c];
                  });
}

Var softmax_rows(Var a) {
  Tape& t = a.tape();
  const Shape s = a.shape();
  const auto x = a.value();
  std::vector<Real> y(s.size());
  for (std::size_t r = 0; r < s.rows; ++r) {
    const Real* xr = x.data() + r * s.cols;
    Real* yr = y.data() + r * s.cols;
    const Real mx = *std::max_element(xr, xr + s.cols);
    Real z = 0;
    for (std::size_t c = 0; c < s.cols; ++c) {
      yr[c] = std::exp(xr[c] - mx);
      z += yr[c];
    }
    for (std::size_t c = 0; c < s.cols; ++c) yr[c] /= z;
  }
  const std::uint32_t ai = a.index();
  return t.record("softmax_rows", s, std::move(y), {a}, [ai, s](Tape& tp, std::uint32_t self) {
    const auto g = tp.grad_buffer(self);
    const auto yv = tp.value(self);
    auto ga = tp.grad_buffer(ai);
    for (std::size_t r = 0; r < s.rows; ++r) {
      const std::size_t o = r * s.cols;
      Real dot = 0;
      for (std::size_t c = 0; c < s.cols; ++c) dot += g[o + c] * yv[o + c];
      for (std::size_t c = 0; c < s.cols; ++c) ga[o + c] += yv[o + c] * (g[o + c] - dot);
    }
  });
}

Var layer_norm_rows(Var a, Var gain, Var bias, Real eps) {
  Tape& t = same_tape("layer_norm_rows", a, gain);
  same_tape("layer_norm_rows", a, bias);
  const Shape s = a.shape();
  const Shape row{1, s.cols};
  if (!(gain.shape() == row)) shape_error("layer_norm_rows", s, gain.shape());
  if (!(bias.shape() == row)) shape_error("layer_norm_rows", s, bias.shape());
  const auto x = a.value();
  const auto gv = gain.value();
  const auto bv = bias.value();
  std::vector<Real> xhat(s.size()), rstd(s.rows), y(s.size());
  const Real n = static_cast<Real>(s.cols);
  for (std::size_t r = 0; r < s.rows; ++r) {
    const Real* xr = x.data() + r * s.cols;
    Real mu = 0;
    for (std::size_t c = 0; c < s.cols; ++c) mu += xr[c];
    mu /= n;
    Real var = 0;
    for (std::size_t c = 0; c < s.cols; ++c) var += (xr[c] - mu) * (xr[c] - mu);
    var /= n;
    rstd[r] = Real{1} / std::sqrt(var + eps);
    for (std::size_t c = 0; c < s.cols; ++c) {
      const std::size_t i = r * s.cols + c;
      xhat[i] = (xr[c] - mu) * rstd[r];
      y[i] = xhat[i] * gv[c] + bv[c];
    }
  }
  const std::uint32_t ai = a.index(), gi = gain.index(), bi = bias.index();
  return t.record(
      "layer_norm_rows", s, std::move(y), {a, gain, bias},
      [ai, gi, bi, s, xhat = std::move(xhat), rstd = std::move(rstd)](Tape& tp,
                                                                     std::uint32_t self) {
        const auto g = tp.grad_buffer(self);
        const auto gv = tp.value(gi);
        if (tp.needs_grad(gi)) {
          auto gg = tp.grad_buffer(gi);
          for (std::size_t i = 0; i < g.size(); ++i) gg[i % s.cols] += g[i] * xhat[i];
        }
        if (tp.needs_grad(bi)) {
          auto gb = tp.grad_buffer(bi);
          for (std::size_t i = 0; i < g.size(); ++i) gb[i % s.cols] += g[i];
        }
        if (tp.needs_grad(ai)) {
          auto ga = tp.grad_buffer(ai);
          const Real n = static_cast<Real>(s.cols);
          for (std::size_t r = 0; r < s.rows; ++r) {
            const std::size_t o = r * s.cols;
            Real m1 = 0, m2 = 0;
            for (std::size_t c = 0; c < s.cols; ++c) {
              const Real dxh = g[o + c] * gv[c];
              m1 += dxh;
              m2 += dxh * xhat[o + c];
            }
            m1 /= n;
            m2 /= n;
            for (std::size_t c = 0; c < s.cols; ++c) {
              const Real dxh = g[o + c] * gv[c];
              ga[o + c] += rstd[r] * (dxh - m1 - xhat[o + c] * m2);
            }
          }
        }
      });
}

Var sigmoid(Var a) {
  return unary("sigmoid", a, stable_sigmoid, [](Real, Real y) { return y * (Real{1} - y); });
}

Var tanh(Var a) {
  return unary(
      "tanh", a, [](Real x) { return std::tanh(x); }, [](Real, Real y) { return Real{1} - y * y; });
}

Var relu(Var a) {
  return unary(
      "relu", a, [](Real x) { return x > 0 ? x : Real{0}; },
      [](Real x, Real) { return x > 0 ? Real{1} : Real{0}; });
}

Var exp(Var a) {
  return unary("exp", a, [](Real x) { return std::exp(x); }, [](Real, Real y) { return y; });
}

Var log(Var a) {
  return unary("log", a, [](Real x) { return std::log(x); }, [](Real x, Real) { return 1 / x; });
}

Var gather_rows(Var table, std::span<const std::size_t> indices) {
  Tape& t = table.tape();
  const Shape s = table.shape();
  const auto x = table.value();
  std::vector<Real> y(indices.size() * s.cols);
  for (std::size_t k = 0; k < indices.size(); ++k) {
    if (indices[k] >= s.rows) {
      throw DataError("gather_rows: index " + std::to_string(indices[k]) +
                      " out of range for table " + to_string(s));
    }
    std::copy_n(x.begin() + indices[k] * s.cols, s.cols, y.begin() + k * s.cols);
  }
  const std::uint32_t ti = table.index();
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  const Shape out{idx.size(), s.cols};
  return t.record("gather_rows", out, std::move(y), {table},
                  [ti, s, idx = std::move(idx)](Tape& tp, std::uint32_t self) {
                    const auto g = tp.grad_buffer(self);
                    auto gt = tp.grad_buffer(ti);
                    for (std::size_t k = 0; k < idx.size(); ++k)
                      for (std::size_t c = 0; c < s.cols; ++c)
                        gt[idx[k] * s.cols + c] += g[k * s.cols + c];
                  });
}

Var masked_fill(Var a, std::span<const std::uint8_t> mask, Real fill) {
  Tape& t = a.tape();
  const Shape s = a.shape();
  if (mask.size() != s.size()) {
    throw ShapeError("masked_fill: mask of size " + std::to_string(mask.size()) + " for " +
                     to_string(s));
  }
  const auto x = a.value();
  std::vector<Real> y(x.begin(), x.end());
  for (std::size_t i = 0; i < y.size(); ++i)
    if (mask[i]) y[i] = fill;
  const std::uint32_t ai = a.index();
  std::vector<std::uint8_t> m(mask.begin(), mask.end());
  return t.record("masked_fill", s, std::move(y), {a},
                  [ai, m = std::move(m)](Tape& tp, std::uint32_t self) {
                    const auto g = tp.grad_buffer(self);
                    auto ga = tp.grad_buffer(ai);
                    for (std::size_t i = 0; i < g.size(); ++i)
                      if (!m[i]) ga[i] += g[i];
                  });
}

Var dropout(Var a, Real p, Rng& rng, bool train) {
  if (p < 0 || p >= 1) throw Error("dropout: rate must lie in [0, 1), got " + std::to_string(p));
  if (!train || p == 0) return a;
  Tape& t = a.tape();
  const auto x = a.value();
  const Real keep_scale = Real{1} / (Real{1} - p);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Real> m(x.size());
  std::vector<Real> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    m[i] = u(rng) < p ? Real{0} : keep_scale;
    y[i] = x[i] * m[i];
  }
  const std::uint32_t ai = a.index();
  return t.record("dropout", a.shape(), std::move(y), {a},
                  [ai, m = std::move(m)](Tape& tp, std::uint32_t self) {
                    const auto g = tp.grad_buffer(self);
                    auto ga = tp.grad_buffer(ai);
                    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * m[i];
                  });
}

Var sum(Var a) {
  Tape& t = a.tape();
  const auto x = a.value();
  const Real s = std::accumulate(x.begin(), x.end(), Real{0});
  const std::uint32_t ai = a.index();
  return t.record("sum", {1, 1}, {s}, {a}, [ai](Tape& tp, std::uint32_t self) {
    const Real g = tp.grad_buffer(self)[0];
    for (Real& v : tp.grad_buffer(ai)) v += g;
  });
}

Var mean(Var a) {
  Tape& t = a.tape();
  const auto x = a.value();
  if (x.empty()) throw ShapeError("mean: empty operand");
  const Real n = static_cast<Real>(x.size());
  const Real s = std::accumulate(x.begin(), x.end(), Real{0}) / n;
  const std::uint32_t ai = a.index();
  return t.record("mean", {1, 1}, {s}, {a}, [ai, n](Tape& tp, std::uint32_t self) {
    const Real g = tp.grad_buffer(self)[0] / n;
    for (Real& v : tp.grad_buffer(ai)) v += g;
  });
}

Var cross_entropy_logits(Var logits, std::span<const std::size_t> targets) {
  Tape& t = logits.tape();
  const Shape s = logits.shape();
  if (targets.size() != s.rows) {
    throw ShapeError("cross_entropy_logits: " + std::to_string(targets.size()) +
                     " targets for logits " + to_string(s));
  }
  const auto x = logits.value();
  std::vector<Real> probs(s.size());
  Real loss = 0;
  for (std::size_t r = 0; r < s.rows; ++r) {
    if (targets[r] >= s.cols) {
      throw DataError("cross_entropy_logits: target " + std::to_string(targets[r]) +
                      " out of range for " + std::to_string(s.cols) + " classes");
    }
    const Real* xr = x.data() + r * s.cols;
    Real* pr = probs.data() + r * s.cols;
    const Real mx = *std::max_element(xr, xr + s.cols);
    Real z = 0;
    for (std::size_t c = 0; c < s.cols; ++c) {
      pr[c] = std::exp(xr[c] - mx);
      z += pr[c];
    }
    for (std::size_t c = 0; c < s.cols; ++c) pr[c] /= z;
    loss += (mx + std::log(z)) - xr[targets[r]];
  }
  const Real rows = static_cast<Real>(s.rows);
  loss /= rows;
  const std::uint32_t li = logits.index();
  std::vector<std::size_t> tg(targets.begin(), targets.end());
  return t.record("cross_entropy_logits", {1, 1}, {loss}, {logits},
                  [li, s, rows, probs = std::move(probs), tg = std::move(tg)](Tape& tp,
                                                                              std::uint32_t self) {
                    const Real g = tp.grad_buffer(self)[0] / rows;
                    auto gl = tp.grad_buffer(li);
                    for (std::size_t r = 0; r < s.rows; ++r) {
                      for (std::size_t c = 0; c < s.cols; ++c) {
                        const std::size_t i = r * s.cols + c;
                        gl[i] += g * (probs[i] - (c == tg[r] ? Real{1} : Real{0}));
                      }
                    }
                  });
}

// ---- ParamStore / GradBuffers ---------------------------------------------

ParamId ParamStore::add(std::string name, Tensor value) {
  if (by_name_.count(name)) throw Error("parameter registered twice: " + name);
  const auto id = static_cast<ParamId>(tensors_.size());
  value.set_requires_grad(true);
  tensors_.push_back(std::move(value));
  by_name_.emplace(name, id);
  names_.push_back(std::move(name));
  return id;
}

ParamId ParamStore::id(const std::string& name) const {
  auto it = by_name_.find(name);
  if (it == by_name_.end()) throw Error("unknown parameter: " + name);
  return it->second;
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const Tensor& t : tensors_) n += t.size();
  return n;
}

void ParamStore::zero_grad() {
  for (Tensor& t : tensors_) t.zero_grad();
}

GradBuffers::GradBuffers(const ParamStore& store) {
  bufs_.reserve(store.size());
  for (ParamId i = 0; i < store.size(); ++i) bufs_.emplace_back(store[i].size(), Real{0});
}

void GradBuffers::zero() {
  for (auto& b : bufs_) std::fill(b.begin(), b.end(), Real{0});
}

void GradBuffers::add(const GradBuffers& other) {
  if (other.bufs_.size() != bufs_.size()) throw ShapeError("GradBuffers::add: size mismatch");
  for (std::size_t k = 0; k < bufs_.size(); ++k) {
    auto& dst = bufs_[k];
    const auto& src = other.bufs_[k];
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }
}

// ---- gradient checking ------------------------------------------------------

namespace {

std::vector<std::size_t> sample_coordinates(std::span<const Real> analytic, std::size_t want,
                                            Rng& rng) {
  const std::size_t n = analytic.size();
  std::vector<std::size_t> out;
  if (n <= want) {
    out.resize(n);
    std::iota(out.begin(), out.end(), std::size_t{0});
    return out;
  }
  std::vector<std::size_t> nonzero;
  for (std::size_t i = 0; i < n; ++i)
    if (analytic[i] != 0) nonzero.push_back(i);
  std::set<std::size_t> chosen;
  std::shuffle(nonzero.begin(), nonzero.end(), rng);
  for (std::size_t i = 0; i < nonzero.size() && chosen.size() < want / 2; ++i)
    chosen.insert(nonzero[i]);
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  while (chosen.size() < want) chosen.insert(pick(rng));
  return {chosen.begin(), chosen.end()};
}

GradCheckEntry compare(std::string name, std::size_t coord, Real analytic, Real numeric,
                       const GradCheckOptions& opts) {
  GradCheckEntry e;
  e.tensor = std::move(name);
  e.coordinate = coord;
  e.analytic = analytic;
  e.numeric = numeric;
  const Real denom = std::max({std::abs(analytic), std::abs(numeric), opts.magnitude_floor});
  e.rel_error = std::abs(analytic - numeric) / denom;
  return e;
}

void finish(GradCheckReport& report, const GradCheckOptions& opts) {
  report.max_rel_error = 0;
  for (const auto& e : report.entries) {
    // NaN compares false; treat it as a failure explicitly.
    if (!(e.rel_error == e.rel_error)) {
      report.max_rel_error = std::numeric_limits<Real>::infinity();
      break;
    }
    report.max_rel_error = std::max(report.max_rel_error, e.rel_error);
  }
  report.passed = report.max_rel_error < opts.tol;
}

}  // namespace

GradCheckReport grad_check(const TapeFn& fn, std::vector<Tensor> inputs,
                           const GradCheckOptions& opts) {
  std::vector<std::vector<Real>> analytic;
  {
    Tape tape;
    std::vector<Var> vars;
    for (const Tensor& in : inputs) vars.push_back(tape.variable(in));
    Var loss = fn(tape, vars);
    tape.backward(loss);
    for (const Var& v : vars) {
      const auto g = tape.grad(v);
      std::vector<Real> gv(v.shape().size(), Real{0});
      std::copy(g.begin(), g.end(), gv.begin());
      analytic.push_back(std::move(gv));
    }
  }
  auto eval = [&](const std::vector<Tensor>& xs) {
    Tape tape(false);
    std::vector<Var> vars;
    for (const Tensor& x : xs) vars.push_back(tape.constant(x));
    return fn(tape, vars).item();
  };
  Rng rng(opts.seed);
  GradCheckReport report;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    for (std::size_t i : sample_coordinates(analytic[k], opts.samples_per_tensor, rng)) {
      const Real x0 = inputs[k][i];
      inputs[k][i] = x0 + opts.h;
      const Real fp = eval(inputs);
      inputs[k][i] = x0 - opts.h;
      const Real fm = eval(inputs);
      inputs[k][i] = x0;
      report.entries.push_back(compare("input" + std::to_string(k), i, analytic[k][i],
                                       (fp - fm) / (2 * opts.h), opts));
    }
  }
  finish(report, opts);
  return report;
}

GradCheckReport grad_check_params(const ParamLossFn& fn, ParamStore& store,
                                  const GradCheckOptions& opts) {
  GradBuffers grads(store);
  {
    Tape tape;
    Var loss = fn(tape, &grads);
    tape.backward(loss);
  }
  auto eval = [&] {
    Tape tape(false);
    return fn(tape, nullptr).item();
  };
  Rng rng(opts.seed);
  GradCheckReport report;
  for (ParamId id = 0; id < store.size(); ++id) {
    auto values = store[id].data();
    for (std::size_t i : sample_coordinates(grads[id], opts.samples_per_tensor, rng)) {
      const Real x0 = values[i];
      values[i] = x0 + opts.h;
      const Real fp = eval();
      values[i] = x0 - opts.h;
      const Real fm = eval();
      values[i] = x0;
      report.entries.push_back(
          compare(store.name(id), i, grads[id][i], (fp - fm) / (2 * opts.h), opts));
    }
  }
  finish(report, opts);
  return report;
}

}  // namespace mtnet::ad
