#include "autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/Core>

#include "error.hpp"

namespace protoedit::ad {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;
using VecMap = Eigen::Map<Eigen::VectorXd>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;

ConstMatMap as_matrix(const Tensor& t) { return ConstMatMap(t.data(), t.rows(), t.cols()); }
MatMap as_matrix(Tensor& t) { return MatMap(t.data(), t.rows(), t.cols()); }
ConstVecMap as_vector(const Tensor& t) { return ConstVecMap(t.data(), t.size()); }
VecMap as_vector(Tensor& t) { return VecMap(t.data(), t.size()); }

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
  fail(ErrorCode::kInvalidArgument,
       std::string(op) + ": incompatible shapes " + a.str() + " and " + b.str());
}

Tape& tape_of(Var a) {
  if (!a.valid()) fail(ErrorCode::kInvalidArgument, "operation on an unbound Var");
  return *a.tape();
}

Tape& tape_of(Var a, Var b) {
  Tape& t = tape_of(a);
  if (b.tape() != &t) fail(ErrorCode::kInvalidArgument, "operands live on different tapes");
  return t;
}

const Tensor& in_value(Tape& t, int node, int slot) {
  return t.node(t.node(node).inputs[slot]).val();
}

}  // namespace

// ---- Shape / Tensor ----

Shape::Shape(std::initializer_list<std::size_t> dims) : Shape(std::span<const std::size_t>(dims.begin(), dims.size())) {}

Shape::Shape(std::span<const std::size_t> dims) {
  if (dims.size() > kMaxRank) fail(ErrorCode::kInvalidArgument, "tensor rank above 4 is unsupported");
  rank_ = dims.size();
  std::copy(dims.begin(), dims.end(), dims_.begin());
}

std::size_t Shape::numel() const {
  std::size_t n = 1;
  for (std::size_t i = 0; i < rank_; ++i) n *= dims_[i];
  return n;
}

std::string Shape::str() const {
  std::string s = "[";
  for (std::size_t i = 0; i < rank_; ++i) {
    if (i) s += ",";
    s += std::to_string(dims_[i]);
  }
  return s + "]";
}

Tensor::Tensor(Shape shape, double fill) : shape_(shape), data_(shape.numel(), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(shape), data_(data.begin(), data.end()) {
  if (data_.size() != shape_.numel()) {
    fail(ErrorCode::kInvalidArgument, "tensor data length " + std::to_string(data_.size()) +
                                          " does not match shape " + shape_.str());
  }
}

Tensor Tensor::vector(std::vector<double> v) {
  const std::size_t n = v.size();
  return Tensor(Shape{n}, std::move(v));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> v) {
  return Tensor(Shape{rows, cols}, std::move(v));
}

double Tensor::item() const {
  if (data_.size() != 1) fail(ErrorCode::kInvalidArgument, "item() on tensor of shape " + shape_.str());
  return data_[0];
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

// ---- ParameterSet ----

ParameterSet::ParameterSet(const ParameterSet& other) { *this = other; }

ParameterSet& ParameterSet::operator=(const ParameterSet& other) {
  if (this == &other) return *this;
  params_.clear();
  by_name_.clear();
  for (const auto& p : other.params_) {
    auto copy = std::make_unique<Parameter>(*p);
    by_name_[copy->name] = copy.get();
    params_.push_back(std::move(copy));
  }
  return *this;
}

Parameter& ParameterSet::add(std::string name, Shape shape) {
  if (by_name_.count(name)) fail(ErrorCode::kInvalidArgument, "duplicate parameter '" + name + "'");
  auto p = std::make_unique<Parameter>();
  p->name = std::move(name);
  p->value = Tensor(shape);
  p->grad = Tensor(shape);
  by_name_[p->name] = p.get();
  params_.push_back(std::move(p));
  return *params_.back();
}

Parameter* ParameterSet::find(std::string_view name) {
  auto it = by_name_.find(std::string(name));
  return it == by_name_.end() ? nullptr : it->second;
}

const Parameter* ParameterSet::find(std::string_view name) const {
  auto it = by_name_.find(std::string(name));
  return it == by_name_.end() ? nullptr : it->second;
}

Parameter& ParameterSet::get(std::string_view name) {
  if (auto* p = find(name)) return *p;
  fail(ErrorCode::kInvalidArgument, "unknown parameter '" + std::string(name) + "'");
}

const Parameter& ParameterSet::get(std::string_view name) const {
  if (const auto* p = find(name)) return *p;
  fail(ErrorCode::kInvalidArgument, "unknown parameter '" + std::string(name) + "'");
}

void ParameterSet::zero_grad() {
  for (auto& p : params_) p->grad.fill(0.0);
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->value.size();
  return n;
}

double ParameterSet::grad_norm() const {
  double sq = 0.0;
  for (const auto& p : params_)
    for (double g : p->grad.values()) sq += g * g;
  return std::sqrt(sq);
}

// ---- Var / Tape ----

const Tensor& Var::value() const {
  if (!tape_) fail(ErrorCode::kInvalidArgument, "value() of an unbound Var");
  return tape_->value(*this);
}

Var Tape::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return make_var(static_cast<int>(nodes_.size()) - 1);
}

Var Tape::variable(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = grad_enabled_;
  nodes_.push_back(std::move(n));
  return make_var(static_cast<int>(nodes_.size()) - 1);
}

Var Tape::view(const Tensor& t) {
  Node n;
  n.external = &t;
  nodes_.push_back(std::move(n));
  return make_var(static_cast<int>(nodes_.size()) - 1);
}

Var Tape::parameter(Parameter& p) {
  auto it = param_nodes_.find(&p);
  if (it != param_nodes_.end()) return make_var(it->second);
  Node n;
  n.external = &p.value;
  n.param = &p;
  n.needs_grad = grad_enabled_;
  nodes_.push_back(std::move(n));
  const int id = static_cast<int>(nodes_.size()) - 1;
  param_nodes_.emplace(&p, id);
  return make_var(id);
}

Var Tape::record(Tensor value, BackwardFn fn, std::initializer_list<Var> inputs, long aux,
                 Tensor saved) {
  Node n;
  n.value = std::move(value);
  n.saved = std::move(saved);
  n.aux = aux;
  std::size_t slot = 0;
  bool any = false;
  for (const Var& v : inputs) {
    if (v.tape() != this) fail(ErrorCode::kInvalidArgument, "operands live on different tapes");
    n.inputs[slot++] = v.id();
    any = any || nodes_[v.id()].needs_grad;
  }
  n.needs_grad = grad_enabled_ && any;
  if (n.needs_grad) n.backward = fn;
  nodes_.push_back(std::move(n));
  return make_var(static_cast<int>(nodes_.size()) - 1);
}

Var Tape::record_n(Tensor value, BackwardFn fn, std::span<const Var> inputs, long aux) {
  Node n;
  n.value = std::move(value);
  n.aux = aux;
  bool any = false;
  n.extra_inputs.reserve(inputs.size());
  for (const Var& v : inputs) {
    if (v.tape() != this) fail(ErrorCode::kInvalidArgument, "operands live on different tapes");
    n.extra_inputs.push_back(v.id());
    any = any || nodes_[v.id()].needs_grad;
  }
  n.needs_grad = grad_enabled_ && any;
  if (n.needs_grad) n.backward = fn;
  nodes_.push_back(std::move(n));
  return make_var(static_cast<int>(nodes_.size()) - 1);
}

Tensor* Tape::grad_buffer(int id) {
  if (id < 0) return nullptr;
  Node& n = nodes_[id];
  if (!n.needs_grad) return nullptr;
  if (n.grad.empty() && n.val().size() > 0) n.grad = Tensor(n.val().shape());
  else if (n.grad.size() != n.val().size()) n.grad = Tensor(n.val().shape());
  return &n.grad;
}

void Tape::backward(Var loss) {
  if (loss.tape() != this) fail(ErrorCode::kInvalidArgument, "loss belongs to another tape");
  if (backward_done_) fail(ErrorCode::kState, "backward() already ran on this tape; call reset()");
  const Tensor& lv = value(loss);
  if (lv.size() != 1) fail(ErrorCode::kInvalidArgument, "backward() needs a scalar loss, got " + lv.shape().str());
  backward_done_ = true;
  if (!nodes_[loss.id()].needs_grad) return;
  grad_buffer(loss.id())->fill(1.0);
  for (int id = loss.id(); id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.needs_grad || n.grad.empty()) continue;
    if (n.backward) n.backward(*this, id);
    if (n.param) {
      as_vector(n.param->grad) += as_vector(n.grad);
    }
  }
}

void Tape::reset() {
  nodes_.clear();
  param_nodes_.clear();
  backward_done_ = false;
}

Tensor Tape::grad(Var v) const {
  const Node& n = nodes_[v.id()];
  if (n.grad.empty()) return Tensor(n.val().shape());
  return n.grad;
}

// ---- ops ----

namespace {

void matmul_backward(Tape& t, int id) {
  auto& n = t.node(id);
  const int ia = n.inputs[0], ib = n.inputs[1];
  const Tensor& a = t.node(ia).val();
  const Tensor& b = t.node(ib).val();
  const Tensor& g = n.grad;
  if (Tensor* ga = t.grad_buffer(ia)) {
    if (b.rank() == 1) {
      as_matrix(*ga).noalias() += as_vector(g) * as_vector(b).transpose();
    } else {
      as_matrix(*ga).noalias() += as_matrix(g) * as_matrix(b).transpose();
    }
  }
  if (Tensor* gb = t.grad_buffer(ib)) {
    if (b.rank() == 1) {
      as_vector(*gb).noalias() += as_matrix(a).transpose() * as_vector(g);
    } else {
      as_matrix(*gb).noalias() += as_matrix(a).transpose() * as_matrix(g);
    }
  }
}

}  // namespace

Var matmul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || (bv.rank() != 1 && bv.rank() != 2) || av.cols() != bv.rows()) {
    shape_error("matmul", av.shape(), bv.shape());
  }
  Tensor out;
  if (bv.rank() == 1) {
    out = Tensor(Shape{av.rows()});
    as_vector(out).noalias() = as_matrix(av) * as_vector(bv);
  } else {
    out = Tensor(Shape{av.rows(), bv.cols()});
    as_matrix(out).noalias() = as_matrix(av) * as_matrix(bv);
  }
  return t.record(std::move(out), matmul_backward, {a, b});
}

Var transpose(Var a) {
  Tape& t = tape_of(a);
  const Tensor& av = a.value();
  if (av.rank() != 2) fail(ErrorCode::kInvalidArgument, "transpose needs rank 2, got " + av.shape().str());
  Tensor out(Shape{av.cols(), av.rows()});
  as_matrix(out) = as_matrix(av).transpose();
  return t.record(std::move(out), [](Tape& t, int id) {
    auto& n = t.node(id);
    const Tensor& g = n.grad;
    if (Tensor* ga = t.grad_buffer(n.inputs[0])) as_matrix(*ga) += as_matrix(g).transpose();
  }, {a});
}

Var add(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.shape() == bv.shape()) {
    Tensor out = av;
    as_vector(out) += as_vector(bv);
    return t.record(std::move(out), [](Tape& t, int id) {
      auto& n = t.node(id);
      const Tensor& g = n.grad;
      if (Tensor* ga = t.grad_buffer(n.inputs[0])) as_vector(*ga) += as_vector(g);
      if (Tensor* gb = t.grad_buffer(n.inputs[1])) as_vector(*gb) += as_vector(g);
    }, {a, b});
  }
  if (av.rank() == 2 && bv.rank() == 1 && av.cols() == bv.size()) {
    Tensor out = av;
    as_matrix(out).rowwise() += as_vector(bv).transpose();
    return t.record(std::move(out), [](Tape& t, int id) {
      auto& n = t.node(id);
      const Tensor& g = n.grad;
      if (Tensor* ga = t.grad_buffer(n.inputs[0])) as_vector(*ga) += as_vector(g);
      if (Tensor* gb = t.grad_buffer(n.inputs[1])) as_vector(*gb) += as_matrix(g).colwise().sum().transpose();
    }, {a, b});
  }
  shape_error("add", av.shape(), bv.shape());
}

Var sub(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (!(av.shape() == bv.shape())) shape_error("sub", av.shape(), bv.shape());
  Tensor out = av;
  as_vector(out) -= as_vector(bv);
  return t.record(std::move(out), [](Tape& t, int id) {
    auto& n = t.node(id);
    const Tensor& g = n.grad;
    if (Tensor* ga = t.grad_buffer(n.inputs[0])) as_vector(*ga) += as_vector(g);
    if (Tensor* gb = t.grad_buffer(n.inputs[1])) as_vector(*gb) -= as_vector(g);
  }, {a, b});
}

Var mul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (!(av.shape() == bv.shape())) shape_error("mul", av.shape(), bv.shape());
  Tensor out = av;
  as_vector(out).array() *= as_vector(bv).array();
  return t.record(std::move(out), [](Tape& t, int id) {
    auto& n = t.node(id);
    const Tensor& g = n.grad;
    const int ia = n.inputs[0], ib = n.inputs[1];
    if (Tensor* ga = t.grad_buffer(ia)) as_vector(*ga).array() += as_vector(g).array() * as_vector(t.node(ib).val()).array();
    if (Tensor* gb = t.grad_buffer(ib)) as_vector(*gb).array() += as_vector(g).array() * as_vector(t.node(ia).val()).array();
  }, {a, b});
}

Var scale(Var a, double factor) {
  Tape& t = tape_of(a);
  Tensor out = a.value();
  as_vector(out) *= factor;
  Tensor saved = Tensor::scalar(factor);
  return t.record(std::move(out), [](Tape& t, int id) {
    auto& n = t.node(id);
    if (Tensor* ga = t.grad_buffer(n.inputs[0])) as_vector(*ga) += n.saved[0] * as_vector(n.grad);
  }, {a}, 0, std::move(saved));
}

Var add_constant(Var a, double c) {
  Tape& t = tape_of(a);
  Tensor out = a.value();
  as_vector(out).array() += c;
  return t.record(std::move(out), [](Tape& t, int id) {
    auto& n = t.node(id);
    if (Tensor* ga = t.grad_buffer(n.inputs[0])) as_vector(*ga) += as_vector(n.grad);
  }, {a});
}

Var tanh(Var a) {
  Tape& t = tape_of(a);
  Tensor out = a.value();
  for (double& v : out.values()) v = std::tanh(v);
  return t.record(std::move(out), [](Tape& t, int id) {
    auto& n = t.node(id);
    if (Tensor* ga = t.grad_buffer(n.inputs[0])) {
      as_vector(*ga).array() += as_vector(n.grad).array() * (1.0 - as_vector(n.value).array().square());
    }
  }, {a});
}

Var sigmoid(Var a) {
  Tape& t = tape_of(a);
  Tensor out = a.value();
  for (double& v : out.values()) v = 1.0 / (1.0 + std::exp(-v));
  return t.record(std::move(out), [](Tape& t, int id) {
    auto& n = t.node(id);
    if (Tensor* ga = t.grad_buffer(n.inputs[0])) {
      const auto y = as_vector(n.value).array();
      as_vector(*ga).array() += as_vector(n.grad).array() * y * (1.0 - y);
    }
  }, {a});
}

Var sqrt(Var a) {
  Tape& t = tape_of(a);
  Tensor out = a.value();
  for (double& v : out.values()) v = std::sqrt(v);
  return t.record(std::move(out), [](Tape& t, int id) {
    auto& n = t.node(id);
    if (Tensor* ga = t.grad_buffer(n.inputs[0])) {
      as_vector(*ga).array() += as_vector(n.grad).array() * 0.5 / as_vector(n.value).array();
    }
  }, {a});
}

Var min_constant(Var a, double c) {
  Tape& t = tape_of(a);
  Tensor out = a.value();
  for (double& v : out.values()) v = std::min(v, c);
  Tensor saved = Tensor::scalar(c);
  return t.record(std::move(out), [](Tape& t, int id) {
    auto& n = t.node(id);
    const Tensor& x = in_value(t, id, 0);
    if (Tensor* ga = t.grad_buffer(n.inputs[0])) {
      for (std::size_t i = 0; i < x.size(); ++i)
        if (x[i] < n.saved[0]) (*ga)[i] += n.grad[i];
    }
  }, {a}, 0, std::move(saved));
}

namespace {

void softmax_rows(const double* in, double* out, std::size_t n) {
  const double m = *std::max_element(in, in + n);
  double z = 0.0;
  for (std::size_t i = 0; i < n; ++i) z += (out[i] = std::exp(in[i] - m));
  for (std::size_t i = 0; i < n; ++i) out[i] /= z;
}

}  // namespace

Var softmax(Var a, int axis) {
  Tape& t = tape_of(a);
  const Tensor& av = a.value();
  if (av.rank() == 1) {
    if (axis != -1 && axis != 0) fail(ErrorCode::kInvalidArgument, "softmax axis out of range");
    Tensor out(av.shape());
    softmax_rows(av.data(), out.data(), av.size());
    return t.record(std::move(out), [](Tape& t, int id) {
      auto& n = t.node(id);
      if (Tensor* ga = t.grad_buffer(n.inputs[0])) {
        const auto p = as_vector(n.value);
        const auto g = as_vector(n.grad);
        as_vector(*ga).array() += p.array() * (g.array() - g.dot(p));
      }
    }, {a});
  }
  if (av.rank() != 2) fail(ErrorCode::kInvalidArgument, "softmax needs rank 1 or 2, got " + av.shape().str());
  const int ax = axis < 0 ? 1 : axis;
  if (ax > 1) fail(ErrorCode::kInvalidArgument, "softmax axis out of range");
  RowMatrix m = as_matrix(av);
  if (ax == 0) m.transposeInPlace();
  RowMatrix p(m.rows(), m.cols());
  for (Eigen::Index r = 0; r < m.rows(); ++r) softmax_rows(m.row(r).data(), p.row(r).data(), m.cols());
  if (ax == 0) p.transposeInPlace();
  Tensor out(av.shape());
  as_matrix(out) = p;
  return t.record(std::move(out), [](Tape& t, int id) {
    auto& n = t.node(id);
    Tensor* ga = t.grad_buffer(n.inputs[0]);
    if (!ga) return;
    RowMatrix p = as_matrix(n.value);
    RowMatrix g = as_matrix(n.grad);
    if (n.aux == 0) {
      p.transposeInPlace();
      g.transposeInPlace();
    }
    RowMatrix dx(p.rows(), p.cols());
    for (Eigen::Index r = 0; r < p.rows(); ++r) {
      const double s = g.row(r).dot(p.row(r));
      dx.row(r) = p.row(r).array() * (g.row(r).array() - s);
    }
    if (n.aux == 0) dx.transposeInPlace();
    as_matrix(*ga) += dx;
  }, {a}, ax);
}

Var log_softmax(Var a) {
  Tape& t = tape_of(a);
  const Tensor& av = a.value();
  if (av.rank() != 1) fail(ErrorCode::kInvalidArgument, "log_softmax needs rank 1, got " + av.shape().str());
  Tensor out(av.shape());
  const double m = *std::max_element(av.data(), av.data() + av.size());
  double z = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) z += std::exp(av[i] - m);
  const double lse = m + std::log(z);
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] - lse;
  return t.record(std::move(out), [](Tape& t, int id) {
    auto& n = t.node(id);
    if (Tensor* ga = t.grad_buffer(n.inputs[0])) {
      const auto g = as_vector(n.grad);
      const double gs = g.sum();
      as_vector(*ga).array() += g.array() - as_vector(n.value).array().exp() * gs;
    }
  }, {a});
}

Var concat(std::span<const Var> parts, int axis) {
  if (parts.empty()) fail(ErrorCode::kInvalidArgument, "concat of zero tensors");
  Tape& t = tape_of(parts[0]);
  const Tensor& first = parts[0].value();
  if (first.rank() == 1) {
    if (axis != 0) fail(ErrorCode::kInvalidArgument, "concat of vectors needs axis 0");
    std::size_t total = 0;
    for (const Var& p : parts) {
      if (p.value().rank() != 1) shape_error("concat", first.shape(), p.value().shape());
      total += p.value().size();
    }
    Tensor out(Shape{total});
    std::size_t off = 0;
    for (const Var& p : parts) {
      const Tensor& v = p.value();
      std::copy(v.data(), v.data() + v.size(), out.data() + off);
      off += v.size();
    }
    return t.record_n(std::move(out), [](Tape& t, int id) {
      auto& n = t.node(id);
      std::size_t off = 0;
      for (int in : n.extra_inputs) {
        const std::size_t len = t.node(in).val().size();
        if (Tensor* g = t.grad_buffer(in)) as_vector(*g) += ConstVecMap(n.grad.data() + off, len);
        off += len;
      }
    }, parts, 0);
  }
  if (first.rank() != 2 || axis < 0 || axis > 1) {
    fail(ErrorCode::kInvalidArgument, "concat supports rank 1 (axis 0) or rank 2 (axis 0/1)");
  }
  std::size_t rows = 0, cols = 0;
  for (const Var& p : parts) {
    const Tensor& v = p.value();
    if (v.rank() != 2) shape_error("concat", first.shape(), v.shape());
    if (axis == 0) {
      if (v.cols() != first.cols()) shape_error("concat", first.shape(), v.shape());
      rows += v.rows();
      cols = v.cols();
    } else {
      if (v.rows() != first.rows()) shape_error("concat", first.shape(), v.shape());
      cols += v.cols();
      rows = v.rows();
    }
  }
  Tensor out(Shape{rows, cols});
  std::size_t off = 0;
  for (const Var& p : parts) {
    const Tensor& v = p.value();
    if (axis == 0) {
      as_matrix(out).middleRows(off, v.rows()) = as_matrix(v);
      off += v.rows();
    } else {
      as_matrix(out).middleCols(off, v.cols()) = as_matrix(v);
      off += v.cols();
    }
  }
  return t.record_n(std::move(out), [](Tape& t, int id) {
    auto& n = t.node(id);
    std::size_t off = 0;
    const ConstMatMap g = as_matrix(static_cast<const Tensor&>(n.grad));
    for (int in : n.extra_inputs) {
      const Tensor& v = t.node(in).val();
      Tensor* gi = t.grad_buffer(in);
      if (n.aux == 0) {
        if (gi) as_matrix(*gi) += g.middleRows(off, v.rows());
        off += v.rows();
      } else {
        if (gi) as_matrix(*gi) += g.middleCols(off, v.cols());
        off += v.cols();
      }
    }
  }, parts, axis);
}

Var concat(std::initializer_list<Var> parts, int axis) {
  return concat(std::span<const Var>(parts.begin(), parts.size()), axis);
}

Var slice(Var a, std::size_t begin, std::size_t end) {
  Tape& t = tape_of(a);
  const Tensor& av = a.value();
  if (av.rank() == 0 || av.rank() > 2 || begin > end || end > av.rows()) {
    fail(ErrorCode::kInvalidArgument, "slice [" + std::to_string(begin) + "," + std::to_string(end) +
                                          ") out of range for shape " + av.shape().str());
  }
  const std::size_t width = av.rank() == 2 ? av.cols() : 1;
  Tensor out = av.rank() == 1 ? Tensor(Shape{end - begin}) : Tensor(Shape{end - begin, width});
  std::copy(av.data() + begin * width, av.data() + end * width, out.data());
  return t.record(std::move(out), [](Tape& t, int id) {
    auto& n = t.node(id);
    if (Tensor* ga = t.grad_buffer(n.inputs[0])) {
      const std::size_t off = static_cast<std::size_t>(n.aux);
      VecMap(ga->data() + off, n.grad.size()) += as_vector(n.grad);
    }
  }, {a}, static_cast<long>(begin * width));
}

Var stack_rows(std::span<const Var> rows) {
  if (rows.empty()) fail(ErrorCode::kInvalidArgument, "stack_rows of zero tensors");
  Tape& t = tape_of(rows[0]);
  const std::size_t width = rows[0].value().size();
  for (const Var& r : rows) {
    if (r.value().rank() != 1 || r.value().size() != width) {
      shape_error("stack_rows", rows[0].value().shape(), r.value().shape());
    }
  }
  Tensor out(Shape{rows.size(), width});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const Tensor& v = rows[i].value();
    std::copy(v.data(), v.data() + width, out.data() + i * width);
  }
  return t.record_n(std::move(out), [](Tape& t, int id) {
    auto& n = t.node(id);
    const std::size_t width = n.value.cols();
    for (std::size_t i = 0; i < n.extra_inputs.size(); ++i) {
      if (Tensor* g = t.grad_buffer(n.extra_inputs[i])) {
        as_vector(*g) += ConstVecMap(n.grad.data() + i * width, width);
      }
    }
  }, rows, 0);
}

Var mean_rows(Var a) {
  Tape& t = tape_of(a);
  const Tensor& av = a.value();
  if (av.rank() != 2 || av.rows() == 0) fail(ErrorCode::kInvalidArgument, "mean_rows needs a nonempty matrix, got " + av.shape().str());
  Tensor out(Shape{av.cols()});
  as_vector(out) = as_matrix(av).colwise().mean().transpose();
  return t.record(std::move(out), [](Tape& t, int id) {
    auto& n = t.node(id);
    if (Tensor* ga = t.grad_buffer(n.inputs[0])) {
      const double inv = 1.0 / static_cast<double>(ga->rows());
      as_matrix(*ga).rowwise() += inv * as_vector(n.grad).transpose();
    }
  }, {a});
}

Var embedding_lookup(Var table, TokenId row) {
  Tape& t = tape_of(table);
  const Tensor& tv = table.value();
  if (tv.rank() != 2) fail(ErrorCode::kInvalidArgument, "embedding table must be rank 2, got " + tv.shape().str());
  if (row < 0 || static_cast<std::size_t>(row) >= tv.rows()) {
    fail(ErrorCode::kInvalidArgument, "token id " + std::to_string(row) + " outside embedding table " + tv.shape().str());
  }
  Tensor out(Shape{tv.cols()});
  std::copy(tv.data() + row * tv.cols(), tv.data() + (row + 1) * tv.cols(), out.data());
  return t.record(std::move(out), [](Tape& t, int id) {
    auto& n = t.node(id);
    if (Tensor* ga = t.grad_buffer(n.inputs[0])) {
      const std::size_t w = n.grad.size();
      VecMap(ga->data() + n.aux * w, w) += as_vector(n.grad);
    }
  }, {table}, row);
}

Var embedding_sum(Var table, std::span<const TokenId> rows) {
  Tape& t = tape_of(table);
  const Tensor& tv = table.value();
  if (tv.rank() != 2) fail(ErrorCode::kInvalidArgument, "embedding table must be rank 2, got " + tv.shape().str());
  Tensor out(Shape{tv.cols()});
  std::vector<double> ids;
  ids.reserve(rows.size());
  for (TokenId r : rows) {
    if (r < 0 || static_cast<std::size_t>(r) >= tv.rows()) {
      fail(ErrorCode::kInvalidArgument, "token id " + std::to_string(r) + " outside embedding table " + tv.shape().str());
    }
    as_vector(out) += ConstVecMap(tv.data() + r * tv.cols(), tv.cols());
    ids.push_back(static_cast<double>(r));
  }
  Tensor saved = Tensor::vector(std::move(ids));
  return t.record(std::move(out), [](Tape& t, int id) {
    auto& n = t.node(id);
    if (Tensor* ga = t.grad_buffer(n.inputs[0])) {
      const std::size_t w = n.grad.size();
      for (double r : n.saved.values()) VecMap(ga->data() + static_cast<std::size_t>(r) * w, w) += as_vector(n.grad);
    }
  }, {table}, 0, std::move(saved));
}

Var cross_entropy_with_logits(Var logits, TokenId target) {
  Tape& t = tape_of(logits);
  const Tensor& lv = logits.value();
  if (lv.rank() != 1) fail(ErrorCode::kInvalidArgument, "cross_entropy_with_logits needs rank-1 logits, got " + lv.shape().str());
  if (target < 0 || static_cast<std::size_t>(target) >= lv.size()) {
    fail(ErrorCode::kInvalidArgument, "target id " + std::to_string(target) + " outside logits " + lv.shape().str());
  }
  Tensor probs(lv.shape());
  softmax_rows(lv.data(), probs.data(), lv.size());
  const double m = *std::max_element(lv.data(), lv.data() + lv.size());
  double z = 0.0;
  for (std::size_t i = 0; i < lv.size(); ++i) z += std::exp(lv[i] - m);
  const double loss = m + std::log(z) - lv[target];
  return t.record(Tensor::scalar(loss), [](Tape& t, int id) {
    auto& n = t.node(id);
    if (Tensor* ga = t.grad_buffer(n.inputs[0])) {
      const double g = n.grad[0];
      as_vector(*ga) += g * as_vector(n.saved);
      (*ga)[static_cast<std::size_t>(n.aux)] -= g;
    }
  }, {logits}, target, std::move(probs));
}

Var sum(Var a) {
  Tape& t = tape_of(a);
  const double s = as_vector(a.value()).sum();
  return t.record(Tensor::scalar(s), [](Tape& t, int id) {
    auto& n = t.node(id);
    if (Tensor* ga = t.grad_buffer(n.inputs[0])) as_vector(*ga).array() += n.grad[0];
  }, {a});
}

Var add_n(std::span<const Var> terms) {
  if (terms.empty()) fail(ErrorCode::kInvalidArgument, "add_n of zero tensors");
  Tape& t = tape_of(terms[0]);
  Tensor out = terms[0].value();
  for (std::size_t i = 1; i < terms.size(); ++i) {
    const Tensor& v = terms[i].value();
    if (!(v.shape() == out.shape())) shape_error("add_n", out.shape(), v.shape());
    as_vector(out) += as_vector(v);
  }
  return t.record_n(std::move(out), [](Tape& t, int id) {
    auto& n = t.node(id);
    for (int in : n.extra_inputs)
      if (Tensor* g = t.grad_buffer(in)) as_vector(*g) += as_vector(n.grad);
  }, terms, 0);
}

Var dot(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 1 || !(av.shape() == bv.shape())) shape_error("dot", av.shape(), bv.shape());
  const double d = as_vector(av).dot(as_vector(bv));
  return t.record(Tensor::scalar(d), [](Tape& t, int id) {
    auto& n = t.node(id);
    const int ia = n.inputs[0], ib = n.inputs[1];
    const double g = n.grad[0];
    if (Tensor* ga = t.grad_buffer(ia)) as_vector(*ga) += g * as_vector(t.node(ib).val());
    if (Tensor* gb = t.grad_buffer(ib)) as_vector(*gb) += g * as_vector(t.node(ia).val());
  }, {a, b});
}

Var l2_norm(Var a) {
  Tape& t = tape_of(a);
  const Tensor& av = a.value();
  if (av.rank() != 1) fail(ErrorCode::kInvalidArgument, "l2_norm needs rank 1, got " + av.shape().str());
  const double nrm = as_vector(av).norm();
  return t.record(Tensor::scalar(nrm), [](Tape& t, int id) {
    auto& n = t.node(id);
    const double nrm = n.value[0];
    if (nrm == 0.0) return;  // subgradient 0 at the origin
    if (Tensor* ga = t.grad_buffer(n.inputs[0])) as_vector(*ga) += (n.grad[0] / nrm) * as_vector(in_value(t, id, 0));
  }, {a});
}

Var mul_scalar(Var a, Var s) {
  Tape& t = tape_of(a, s);
  const Tensor& sv = s.value();
  if (sv.size() != 1) shape_error("mul_scalar", a.value().shape(), sv.shape());
  Tensor out = a.value();
  as_vector(out) *= sv[0];
  return t.record(std::move(out), [](Tape& t, int id) {
    auto& n = t.node(id);
    const int ia = n.inputs[0], is = n.inputs[1];
    const double s = t.node(is).val()[0];
    if (Tensor* ga = t.grad_buffer(ia)) as_vector(*ga) += s * as_vector(n.grad);
    if (Tensor* gs = t.grad_buffer(is)) (*gs)[0] += as_vector(n.grad).dot(as_vector(t.node(ia).val()));
  }, {a, s});
}

Var div_scalar(Var a, Var s) {
  Tape& t = tape_of(a, s);
  const Tensor& sv = s.value();
  if (sv.size() != 1) shape_error("div_scalar", a.value().shape(), sv.shape());
  Tensor out = a.value();
  as_vector(out) /= sv[0];
  return t.record(std::move(out), [](Tape& t, int id) {
    auto& n = t.node(id);
    const int ia = n.inputs[0], is = n.inputs[1];
    const double s = t.node(is).val()[0];
    if (Tensor* ga = t.grad_buffer(ia)) as_vector(*ga) += as_vector(n.grad) / s;
    // d(a/s)/ds = -a/s^2 = -out/s
    if (Tensor* gs = t.grad_buffer(is)) (*gs)[0] -= as_vector(n.grad).dot(as_vector(n.value)) / s;
  }, {a, s});
}

}  // namespace protoedit::ad
