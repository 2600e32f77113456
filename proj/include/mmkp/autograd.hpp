#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "mmkp/tensor.hpp"

namespace mmkp {

// A trainable tensor. `grad` accumulates across every tape that reads it
// until zero_grad().
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}
  void zero_grad() { grad.fill(0.0); }
};

// Ordered collection of named parameters. Insertion order is the canonical
// order for checkpoints, optimizer state and gradient checks.
class ParamStore {
 public:
  Parameter& add(const std::string& name, Tensor value);
  Parameter& get(const std::string& name);
  const Parameter& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const;
  Parameter& operator[](std::size_t i) { return *params_[i]; }
  const Parameter& operator[](std::size_t i) const { return *params_[i]; }

  void zero_grad();

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
  std::map<std::string, std::size_t> index_;
};

class Tape;

// Handle to a value recorded on a tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::uint32_t id) : tape_(tape), id_(id) {}

  const Tensor& value() const;
  const Tensor& grad() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
  bool valid() const { return tape_ != nullptr; }

  Tape* tape() const { return tape_; }
  std::uint32_t id() const { return id_; }

 private:
  Tape* tape_ = nullptr;
  std::uint32_t id_ = 0;
};

// Define-by-run record of primitive operations. Build one per forward pass.
// backward() may run once; a second call throws ContractError.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::uint32_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var leaf(Tensor value, bool requires_grad = true);
  // Reads a parameter without copying it; gradients flow into Parameter::grad.
  Var param(Parameter& p);

  Var record(Tensor value, std::vector<std::uint32_t> inputs, BackwardFn backward);

  void backward(Var loss);
  bool backward_done() const { return backward_done_; }
  std::size_t size() const { return nodes_.size(); }

  const Tensor& value(std::uint32_t id) const;
  const Tensor& grad(std::uint32_t id) const;
  bool requires_grad(std::uint32_t id) const { return nodes_[id].requires_grad; }
  // Gradient buffer of an input node, or nullptr when it needs no gradient.
  Tensor* grad_sink(std::uint32_t id);

 private:
  struct Node {
    Tensor owned;
    const Tensor* external = nullptr;  // parameter value, read in place
    Tensor grad_owned;
    Tensor* grad_external = nullptr;   // parameter gradient, accumulated in place
    bool has_grad = false;
    bool requires_grad = false;
    std::vector<std::uint32_t> inputs;
    BackwardFn backward;
  };

  std::deque<Node> nodes_;  // deque: references stay valid as the tape grows
  std::unordered_map<const Parameter*, std::uint32_t> param_nodes_;
  bool backward_done_ = false;
};

}  // namespace mmkp
