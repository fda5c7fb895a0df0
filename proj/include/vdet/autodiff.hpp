#pragma once

#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "vdet/tensor.hpp"

namespace vdet {

/// A named trainable tensor with its accumulated gradient.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
};

/// Owns every Parameter of a model, in registration order. Names are unique.
/// Parameters live at stable addresses so tapes may keep pointers to them.
class ParameterStore {
 public:
  Parameter& add(const std::string& name, Tensor init);
  Parameter& get(const std::string& name);
  const Parameter& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::size_t size() const { return params_.size(); }
  std::int64_t scalar_count() const;

  // Registration order.
  std::vector<Parameter*> all();
  std::vector<const Parameter*> all() const;
  std::vector<Parameter*> with_prefix(const std::string& prefix);

  void zero_grad();

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
  std::map<std::string, Parameter*> index_;
};

class Tape;

/// Handle to a value recorded on a Tape.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::int64_t dim(int axis) const { return value().dim(axis); }
  bool requires_grad() const;
};

/// Reverse rule for one recorded op. `grads[i]` is null when input i needs no gradient;
/// otherwise it points at a zero-initialized or partially accumulated buffer to add into.
using BackwardFn = std::function<void(const Tape& tape, const Tensor& grad_out, std::span<Tensor* const> grads)>;

/// Ordered record of executed operations. Gradients are produced by one reverse sweep
/// in reverse recording order, so summation order is fixed and results are bit-reproducible.
class Tape {
 public:
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var input(Tensor value);  // leaf that receives a gradient
  Var param(Parameter& p);  // leaf bound to a Parameter; one node per Parameter

  Var record(Tensor value, std::vector<Var> inputs, BackwardFn backward);

  const Tensor& value(Var v) const;
  const Tensor& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  bool requires_grad(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].requires_grad; }
  // Gradient of the last backward() w.r.t. a leaf v; zeros when v was not reached.
  // Intermediate gradients are released during the sweep.
  Tensor grad(Var v) const;

  /// Reverse pass from a scalar loss. Parameter gradients are accumulated into Parameter::grad.
  void backward(Var loss);

  bool grad_enabled() const { return grad_enabled_; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool has_grad = false;
    bool requires_grad = false;
    Parameter* param = nullptr;
    std::vector<int> inputs;
    BackwardFn backward;
  };

  bool grad_enabled_;
  std::deque<Node> nodes_;  // stable addresses: values are handed out by reference
  std::unordered_map<const Parameter*, int> param_nodes_;
};

}  // namespace vdet
