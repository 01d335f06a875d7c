#pragma once

// Dense double-precision tensors with tape-based reverse-mode
// differentiation. Ranks 0-2 cover everything the editor needs: vectors are
// treated as columns by matmul and broadcasting is limited to bias-add
// (matrix + vector, where the vector has the matrix's column count).

#include <array>
#include <cstddef>
#include <initializer_list>
#include <memory>
#include <new>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "corpus.hpp"

namespace protoedit::ad {

class Shape {
 public:
  static constexpr std::size_t kMaxRank = 4;

  Shape() = default;
  Shape(std::initializer_list<std::size_t> dims);
  explicit Shape(std::span<const std::size_t> dims);

  std::size_t rank() const { return rank_; }
  std::size_t operator[](std::size_t i) const { return dims_[i]; }
  std::size_t numel() const;
  std::string str() const;

  friend bool operator==(const Shape& a, const Shape& b) {
    if (a.rank_ != b.rank_) return false;
    for (std::size_t i = 0; i < a.rank_; ++i)
      if (a.dims_[i] != b.dims_[i]) return false;
    return true;
  }

 private:
  std::array<std::size_t, kMaxRank> dims_{};
  std::size_t rank_ = 0;
};

// Vectorized reductions peel a data-dependent number of leading elements
// when storage is misaligned, which would make sums depend on heap
// addresses. Fixed 64-byte alignment keeps results bit-reproducible.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) { ::operator delete(p, kAlign); }

  template <typename U>
  friend bool operator==(const AlignedAllocator&, const AlignedAllocator<U>&) { return true; }
};

class Tensor {
 public:
  using Storage = std::vector<double, AlignedAllocator<double>>;

  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }
  static Tensor vector(std::vector<double> v);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> v);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.rank(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  // Rank-2: dims; rank-1: (n, 1); rank-0: (1, 1).
  std::size_t rows() const { return rank() == 0 ? 1 : shape_[0]; }
  std::size_t cols() const { return rank() == 2 ? shape_[1] : 1; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  double item() const;

  bool all_finite() const;
  void fill(double v);

 private:
  Shape shape_;
  Storage data_;
};

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
};

// Named parameters in insertion order; names are unique.
class ParameterSet {
 public:
  ParameterSet() = default;
  ParameterSet(const ParameterSet& other);
  ParameterSet& operator=(const ParameterSet& other);
  ParameterSet(ParameterSet&&) noexcept = default;
  ParameterSet& operator=(ParameterSet&&) noexcept = default;

  Parameter& add(std::string name, Shape shape);
  Parameter& get(std::string_view name);
  const Parameter& get(std::string_view name) const;
  Parameter* find(std::string_view name);
  const Parameter* find(std::string_view name) const;

  std::size_t size() const { return params_.size(); }
  Parameter& operator[](std::size_t i) { return *params_[i]; }
  const Parameter& operator[](std::size_t i) const { return *params_[i]; }

  void zero_grad();
  std::size_t scalar_count() const;
  double grad_norm() const;

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
  std::unordered_map<std::string, Parameter*> by_name_;
};

class Tape;

// Handle to a node on a tape. Cheap to copy; valid while its tape lives.
class Var {
 public:
  Var() = default;

  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  using BackwardFn = void (*)(Tape&, int);

  struct Node {
    Tensor value;
    const Tensor* external = nullptr;  // parameter storage, not copied
    Tensor grad;
    Tensor saved;                      // op-specific activation cache
    std::array<int, 3> inputs{-1, -1, -1};
    std::vector<int> extra_inputs;
    long aux = 0;
    BackwardFn backward = nullptr;
    Parameter* param = nullptr;
    bool needs_grad = false;

    const Tensor& val() const { return external ? *external : value; }
  };

  Tape() { nodes_.reserve(1024); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Inference mode: nothing records gradients.
  void set_grad_enabled(bool enabled) { grad_enabled_ = enabled; }
  bool grad_enabled() const { return grad_enabled_; }

  Var constant(Tensor value);
  // Leaf that receives a gradient but is not a Parameter.
  Var variable(Tensor value);
  // Leaf bound to `p`; repeated calls return the same node.
  Var parameter(Parameter& p);
  // Read-only leaf viewing `t` without copying; `t` must outlive the tape.
  Var view(const Tensor& t);

  // Reverse sweep from a scalar loss. Parameter gradients are accumulated
  // into Parameter::grad. A second call without reset() throws.
  void backward(Var loss);
  void reset();

  std::size_t size() const { return nodes_.size(); }
  const Tensor& value(Var v) const { return nodes_[v.id()].val(); }
  // Gradient of the last backward() w.r.t. `v` (zeros if unreached).
  Tensor grad(Var v) const;

  // Op-building interface.
  Node& node(int id) { return nodes_[id]; }
  const Node& node(int id) const { return nodes_[id]; }
  bool needs_grad(int id) const { return id >= 0 && nodes_[id].needs_grad; }
  Var record(Tensor value, BackwardFn fn, std::initializer_list<Var> inputs, long aux = 0,
             Tensor saved = {});
  Var record_n(Tensor value, BackwardFn fn, std::span<const Var> inputs, long aux = 0);
  // Zero-initialized gradient buffer for input `id`, or nullptr if it does
  // not need one.
  Tensor* grad_buffer(int id);

 private:
  Var make_var(int id) { return Var(this, id); }

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, int> param_nodes_;
  bool grad_enabled_ = true;
  bool backward_done_ = false;
};

// ---- primitive ops ----
// Shape mismatches throw Error(kInvalidArgument) naming both shapes.

Var matmul(Var a, Var b);         // [m,k] x [k] -> [m]; [m,k] x [k,n] -> [m,n]
Var transpose(Var a);             // rank 2
Var add(Var a, Var b);            // same shape, or [m,n] + [n] bias-add
Var sub(Var a, Var b);            // same shape
Var mul(Var a, Var b);            // elementwise, same shape
Var scale(Var a, double factor);
Var add_constant(Var a, double c);
Var tanh(Var a);
Var sigmoid(Var a);
Var sqrt(Var a);
Var min_constant(Var a, double c);  // elementwise min(a, c)
Var softmax(Var a, int axis = -1);  // rank 1, or rank 2 along axis 0/1
Var log_softmax(Var a);             // rank 1
Var concat(std::span<const Var> parts, int axis = 0);
Var concat(std::initializer_list<Var> parts, int axis = 0);
Var slice(Var a, std::size_t begin, std::size_t end);  // rank 1 range, or rank 2 rows
Var stack_rows(std::span<const Var> rows);             // rank-1 inputs -> rank 2
Var mean_rows(Var a);                                  // [m,n] -> [n]
Var embedding_lookup(Var table, TokenId row);          // [V,d] -> [d]
Var embedding_sum(Var table, std::span<const TokenId> rows);  // sum of rows, [d]
Var cross_entropy_with_logits(Var logits, TokenId target);   // scalar -log softmax[target]
Var sum(Var a);                                        // scalar
Var add_n(std::span<const Var> terms);                 // same shapes
Var dot(Var a, Var b);                                 // rank-1 -> scalar
Var l2_norm(Var a);                                    // rank-1 -> scalar
Var mul_scalar(Var a, Var s);                          // tensor * scalar node
Var div_scalar(Var a, Var s);                          // tensor / scalar node

}  // namespace protoedit::ad
