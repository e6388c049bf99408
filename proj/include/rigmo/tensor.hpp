#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace rigmo {

/// Thrown when operand shapes are incompatible with an operation.
class ShapeError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// Thrown when a forward op produces NaN or Inf.
class NumericError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Thrown for malformed input data (files, rigs, configs).
class DataError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape &shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_str(const Shape &shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i)
    os << (i ? "," : "") << shape[i];
  os << ')';
  return os.str();
}

class Tape;

/// Dense row-major array of doubles, optionally tracked by a Tape.
///
/// A tensor is a plain value: copying it copies the data and the node handle.
/// Tracked tensors refer to their tape by pointer, so the tape must outlive
/// every tracked tensor that is still used in computation.
class Tensor {
public:
  Tensor() : shape_{}, data_{0.0} {}

  Tensor(Shape shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (numel(shape_) != data_.size())
      throw ShapeError("tensor data size " + std::to_string(data_.size()) +
                       " does not match shape " + shape_str(shape_));
  }

  static Tensor zeros(Shape shape) { return full(std::move(shape), 0.0); }

  static Tensor full(Shape shape, double value) {
    const auto n = numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value));
  }

  static Tensor scalar(double value) { return Tensor({}, {value}); }

  static Tensor vector(std::vector<double> values) {
    const auto n = values.size();
    return Tensor({n}, std::move(values));
  }

  const Shape &shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }

  std::span<const double> data() const { return data_; }
  const std::vector<double> &values() const { return data_; }

  /// Mutable access. Only meaningful for untracked tensors; editing the data
  /// of a tracked tensor does not change what the tape recorded.
  std::vector<double> &mutable_values() { return data_; }

  double operator[](std::size_t i) const { return data_[i]; }

  double item() const {
    if (data_.size() != 1)
      throw ShapeError("item() on tensor of shape " + shape_str(shape_));
    return data_[0];
  }

  double at(std::initializer_list<std::size_t> index) const {
    if (index.size() != shape_.size())
      throw ShapeError("index rank mismatch");
    std::size_t flat = 0;
    std::size_t k = 0;
    for (auto i : index) {
      if (i >= shape_[k])
        throw ShapeError("index out of range");
      flat = flat * shape_[k] + i;
      ++k;
    }
    return data_[flat];
  }

  bool tracked() const { return tape_ != nullptr; }
  Tape *tape() const { return tape_; }
  int node() const { return node_; }

  /// Same values, no tape connection.
  Tensor detached() const { return Tensor(shape_, data_); }

private:
  friend class Tape;
  Shape shape_;
  std::vector<double> data_;
  Tape *tape_ = nullptr;
  int node_ = -1;
};

/// Gradient buffers produced by Tape::backward.
class Gradients {
public:
  Gradients() = default;
  Gradients(std::vector<Shape> shapes, std::vector<std::vector<double>> grads)
      : shapes_(std::move(shapes)), grads_(std::move(grads)) {}

  /// Gradient with respect to a tracked tensor; zeros if the root does not
  /// depend on it.
  Tensor of(const Tensor &x) const {
    if (!x.tracked() || x.node() < 0 ||
        static_cast<std::size_t>(x.node()) >= grads_.size())
      return Tensor::zeros(x.shape());
    const auto &g = grads_[static_cast<std::size_t>(x.node())];
    if (g.empty())
      return Tensor::zeros(x.shape());
    return Tensor(x.shape(), g);
  }

private:
  std::vector<Shape> shapes_;
  std::vector<std::vector<double>> grads_;
};

/// Reverse-mode recording of tensor operations.
///
/// Nodes are appended in evaluation order, so every parent id is smaller than
/// its child id; backward walks the node list strictly in reverse.
class Tape {
public:
  /// Receives the output cotangent and one buffer per parent. A buffer is
  /// null for untracked parents; otherwise it is sized to the parent and the
  /// callback must accumulate (+=) into it.
  using Backward = std::function<void(std::span<const double> grad_out,
                                      std::span<std::vector<double> *> parent_grads)>;

  Tape() = default;
  Tape(const Tape &) = delete;
  Tape &operator=(const Tape &) = delete;

  /// Register a leaf (learnable input).
  Tensor variable(Tensor value) {
    Tensor out = value.detached();
    out.tape_ = this;
    out.node_ = static_cast<int>(nodes_.size());
    nodes_.push_back(Node{out.shape(), {}, {}});
    return out;
  }

  /// Record an op result. Parents that live on another tape are an error.
  Tensor record(Tensor value, const std::vector<const Tensor *> &parents,
                Backward backward) {
    std::vector<int> ids;
    ids.reserve(parents.size());
    bool any = false;
    for (const Tensor *p : parents) {
      if (p->tracked()) {
        if (p->tape() != this)
          throw std::logic_error("tensor belongs to a different tape");
        ids.push_back(p->node());
        any = true;
      } else {
        ids.push_back(-1);
      }
    }
    Tensor out = value.detached();
    if (!any)
      return out;
    out.tape_ = this;
    out.node_ = static_cast<int>(nodes_.size());
    nodes_.push_back(Node{out.shape(), std::move(ids), std::move(backward)});
    return out;
  }

  std::size_t size() const { return nodes_.size(); }

  /// Gradients of a scalar root with respect to every node recorded before it.
  /// The tape is not consumed; calling backward twice gives identical results.
  Gradients backward(const Tensor &root) const {
    if (root.size() != 1)
      throw ShapeError("backward root must be a scalar, got shape " +
                       shape_str(root.shape()));
    if (root.tape() != this || root.node() < 0)
      throw std::logic_error("backward root is not recorded on this tape");
    const auto n = static_cast<std::size_t>(root.node()) + 1;
    std::vector<std::vector<double>> grads(n);
    std::vector<Shape> shapes(n);
    for (std::size_t i = 0; i < n; ++i)
      shapes[i] = nodes_[i].shape;
    grads[n - 1] = {1.0};
    std::vector<std::vector<double> *> sinks;
    for (std::size_t i = n; i-- > 0;) {
      const Node &node = nodes_[i];
      if (grads[i].empty() || !node.backward)
        continue;
      sinks.assign(node.parents.size(), nullptr);
      for (std::size_t k = 0; k < node.parents.size(); ++k) {
        const int p = node.parents[k];
        if (p < 0)
          continue;
        auto &buf = grads[static_cast<std::size_t>(p)];
        if (buf.empty())
          buf.assign(numel(nodes_[static_cast<std::size_t>(p)].shape), 0.0);
        sinks[k] = &buf;
      }
      node.backward(grads[i], sinks);
    }
    return Gradients(std::move(shapes), std::move(grads));
  }

private:
  struct Node {
    Shape shape;
    std::vector<int> parents;
    Backward backward;
  };
  std::vector<Node> nodes_;
};

/// Tape shared by a set of inputs, or null if none is tracked.
inline Tape *common_tape(std::initializer_list<const Tensor *> xs) {
  Tape *tape = nullptr;
  for (const Tensor *x : xs) {
    if (!x->tracked())
      continue;
    if (tape && tape != x->tape())
      throw std::logic_error("operands are recorded on different tapes");
    tape = x->tape();
  }
  return tape;
}

inline void check_finite(const std::vector<double> &v, const char *op) {
  for (double x : v)
    if (!std::isfinite(x))
      throw NumericError(std::string("non-finite value produced by ") + op);
}

} // namespace rigmo
