#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mtnet/real.hpp"

// Minimal dense-matrix reverse-mode differentiation.
//
// Every value is a row-major matrix (vectors are 1 x n rows). A Tape records
// primitive applications in execution order; backward() walks the record in
// reverse and accumulates gradients (+=) into every input that needs one.
namespace mtnet::ad {

using Rng = std::mt19937_64;

struct Shape {
  std::size_t rows = 0;
  std::size_t cols = 0;

  std::size_t size() const { return rows * cols; }
  friend bool operator==(const Shape&, const Shape&) = default;
};

std::string to_string(const Shape& s);

class Tensor {
 public:
  Tensor() = default;
  Tensor(std::size_t rows, std::size_t cols, Real fill = 0);
  Tensor(std::size_t rows, std::size_t cols, std::vector<Real> values);

  static Tensor row(std::vector<Real> values);
  static Tensor identity(std::size_t n);

  const Shape& shape() const { return shape_; }
  std::size_t rows() const { return shape_.rows; }
  std::size_t cols() const { return shape_.cols; }
  std::size_t size() const { return data_.size(); }

  std::span<Real> data() { return data_; }
  std::span<const Real> data() const { return data_; }
  Real& operator()(std::size_t r, std::size_t c) { return data_[r * shape_.cols + c]; }
  Real operator()(std::size_t r, std::size_t c) const { return data_[r * shape_.cols + c]; }
  Real& operator[](std::size_t i) { return data_[i]; }
  Real operator[](std::size_t i) const { return data_[i]; }

  bool requires_grad() const { return requires_grad_; }
  void set_requires_grad(bool on);
  // Same shape as the value once requires_grad is set; empty otherwise.
  std::span<Real> grad() { return grad_; }
  std::span<const Real> grad() const { return grad_; }
  void zero_grad();

 private:
  Shape shape_;
  std::vector<Real> data_;
  bool requires_grad_ = false;
  std::vector<Real> grad_;
};

class Tape;

// Handle to a value recorded on a Tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::uint32_t index) : tape_(tape), index_(index) {}

  bool valid() const { return tape_ != nullptr; }
  Tape& tape() const { return *tape_; }
  std::uint32_t index() const { return index_; }

  Shape shape() const;
  std::size_t rows() const { return shape().rows; }
  std::size_t cols() const { return shape().cols; }
  std::span<const Real> value() const;
  Real item() const;  // value of a 1 x 1 var
  Tensor to_tensor() const;

 private:
  Tape* tape_ = nullptr;
  std::uint32_t index_ = 0;
};

class Tape {
 public:
  // Receives the index of the node being differentiated.
  using Backward = std::function<void(Tape&, std::uint32_t self)>;

  // With record_grad = false no backward closures are kept (inference mode).
  explicit Tape(bool record_grad = true) : record_grad_(record_grad) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_grad_; }

  Var constant(Tensor value);
  // Owned leaf whose gradient is readable through grad().
  Var variable(Tensor value);
  // Leaf aliasing `p`'s storage; backward accumulates into p.grad() when
  // p.requires_grad(). `p` must outlive the tape.
  Var param(Tensor& p);
  // Leaf aliasing `p`; backward accumulates into `sink` (size p.size()), or
  // nowhere when `sink` is empty.
  Var param(const Tensor& p, std::span<Real> sink);

  // Seeds d(loss)/d(loss) = 1 and propagates. Throws ShapeError unless loss
  // is 1 x 1. May be called once per tape.
  void backward(Var loss);

  // Gradient of any recorded value after backward(); empty span when the
  // value did not take part in differentiation.
  std::span<const Real> grad(Var v) const;

  std::size_t size() const { return nodes_.size(); }
  // Number of recorded applications per primitive name.
  std::map<std::string, std::size_t> op_counts() const;

  // --- primitive authoring interface ---
  Shape shape(std::uint32_t i) const { return nodes_[i].shape; }
  std::span<const Real> value(std::uint32_t i) const;
  bool needs_grad(std::uint32_t i) const { return nodes_[i].needs_grad; }
  // Gradient buffer of node i, allocated zero-filled on first use.
  std::span<Real> grad_buffer(std::uint32_t i);
  // Records a computed value. `backward` runs only if an input needs grad.
  Var record(const char* op, Shape shape, std::vector<Real> value,
             std::initializer_list<Var> inputs, Backward backward);
  Var record(const char* op, Shape shape, std::vector<Real> value,
             std::span<const Var> inputs, Backward backward);

 private:
  struct Node {
    const char* op = "";
    Shape shape;
    std::vector<Real> owned;
    const Real* external = nullptr;
    bool needs_grad = false;
    std::vector<Real> grad;
    Real* grad_sink = nullptr;
    Backward backward;
  };

  Var push(Node node);

  std::vector<Node> nodes_;
  bool record_grad_ = true;
  bool backward_done_ = false;
};

// ---- primitives ----------------------------------------------------------

Var matmul(Var a, Var b);
Var transpose(Var a);
// Elementwise sum; `b` may also be a 1 x cols row broadcast over a's rows.
Var add(Var a, Var b);
Var sub(Var a, Var b);
// Hadamard product (same shapes).
Var mul(Var a, Var b);
Var scale(Var a, Real s);
Var concat_cols(std::span<const Var> parts);
Var concat_cols(std::initializer_list<Var> parts);
Var concat_rows(std::span<const Var> parts);
Var slice_rows(Var a, std::size_t begin, std::size_t count);
Var slice_cols(Var a, std::size_t begin, std::size_t count);
Var softmax_rows(Var a);
// Row-wise (x - mean) / sqrt(var + eps) * gain + bias; gain/bias are 1 x cols.
Var layer_norm_rows(Var a, Var gain, Var bias, Real eps = 1e-5);
Var sigmoid(Var a);
Var tanh(Var a);
Var relu(Var a);
Var exp(Var a);
Var log(Var a);
// Rows of `table` at `indices`, stacked in order.
Var gather_rows(Var table, std::span<const std::size_t> indices);
// Entries whose mask byte is non-zero are replaced by `fill` (no gradient).
Var masked_fill(Var a, std::span<const std::uint8_t> mask, Real fill);
// Inverted dropout: identity unless `train`; otherwise zeroes each entry with
// probability p and scales survivors by 1 / (1 - p).
Var dropout(Var a, Real p, Rng& rng, bool train);
Var sum(Var a);
Var mean(Var a);
// Mean over rows of -log softmax(logits)[target].
Var cross_entropy_logits(Var logits, std::span<const std::size_t> targets);

// ---- parameters ----------------------------------------------------------

using ParamId = std::uint32_t;

// Every learnable tensor, registered under a unique name.
class ParamStore {
 public:
  ParamId add(std::string name, Tensor value);
  bool contains(const std::string& name) const { return by_name_.count(name) != 0; }
  ParamId id(const std::string& name) const;  // throws Error when absent

  std::size_t size() const { return tensors_.size(); }
  Tensor& operator[](ParamId id) { return tensors_[id]; }
  const Tensor& operator[](ParamId id) const { return tensors_[id]; }
  const std::string& name(ParamId id) const { return names_[id]; }
  std::size_t scalar_count() const;
  void zero_grad();

 private:
  std::vector<Tensor> tensors_;
  std::vector<std::string> names_;
  std::map<std::string, ParamId> by_name_;
};

// Gradient accumulators shaped like a ParamStore; one per worker shard.
class GradBuffers {
 public:
  GradBuffers() = default;
  explicit GradBuffers(const ParamStore& store);

  std::span<Real> operator[](ParamId id) { return bufs_[id]; }
  std::span<const Real> operator[](ParamId id) const { return bufs_[id]; }
  std::size_t size() const { return bufs_.size(); }
  void zero();
  // this += other, element by element.
  void add(const GradBuffers& other);

 private:
  std::vector<std::vector<Real>> bufs_;
};

// ---- finite-difference verification ----------------------------------------

struct GradCheckOptions {
  Real h = 1e-5;
  Real tol = 1e-4;
  // Coordinates sampled per input tensor (all of them when the tensor is
  // smaller). Half are drawn from entries with non-zero analytic gradient.
  std::size_t samples_per_tensor = 16;
  // Relative error is |a - n| / max(|a|, |n|, floor).
  Real magnitude_floor = 1e-6;
  std::uint64_t seed = 7;
};

struct GradCheckEntry {
  std::string tensor;
  std::size_t coordinate = 0;
  Real analytic = 0;
  Real numeric = 0;
  Real rel_error = 0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  Real max_rel_error = 0;
  bool passed = true;
};

using TapeFn = std::function<Var(Tape&, std::span<const Var>)>;

// Compares reverse-mode gradients of a scalar function of `inputs` against
// central differences (f(x + h) - f(x - h)) / 2h.
GradCheckReport grad_check(const TapeFn& fn, std::vector<Tensor> inputs,
                           const GradCheckOptions& opts = {});

// Same check over every tensor of a parameter store; `fn` binds parameters
// through Tape::param(store[id], sink) using the sinks it is handed (empty
// during the finite-difference passes).
using ParamLossFn = std::function<Var(Tape&, GradBuffers*)>;
GradCheckReport grad_check_params(const ParamLossFn& fn, ParamStore& store,
                                  const GradCheckOptions& opts = {});

}  // namespace mtnet::ad
