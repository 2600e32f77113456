#include "mmkp/autograd.hpp"

#include "mmkp/errors.hpp"

namespace mmkp {

Parameter& ParamStore::add(const std::string& name, Tensor value) {
  if (index_.count(name)) throw ContractError("duplicate parameter name: " + name);
  index_[name] = params_.size();
  params_.push_back(std::make_unique<Parameter>(name, std::move(value)));
  return *params_.back();
}

Parameter& ParamStore::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("unknown parameter: " + name);
  return *params_[it->second];
}

const Parameter& ParamStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("unknown parameter: " + name);
  return *params_[it->second];
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->value.numel();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& p : params_) p->zero_grad();
}

const Tensor& Var::value() const { return tape_->value(id_); }
const Tensor& Var::grad() const { return tape_->grad(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

Var Tape::constant(Tensor value) { return leaf(std::move(value), false); }

Var Tape::leaf(Tensor value, bool requires_grad) {
  Node n;
  n.owned = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Tape::param(Parameter& p) {
  auto it = param_nodes_.find(&p);
  if (it != param_nodes_.end()) return Var(this, it->second);
  Node n;
  n.external = &p.value;
  n.grad_external = &p.grad;
  n.has_grad = true;
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  const auto id = static_cast<std::uint32_t>(nodes_.size() - 1);
  param_nodes_[&p] = id;
  return Var(this, id);
}

Var Tape::record(Tensor value, std::vector<std::uint32_t> inputs, BackwardFn backward) {
  if (backward_done_) throw ContractError("tape already consumed by backward(); build a new tape");
  bool needs = false;
  for (auto in : inputs) needs = needs || nodes_[in].requires_grad;
  Node n;
  n.owned = std::move(value);
  n.requires_grad = needs;
  n.inputs = std::move(inputs);
  if (needs) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

const Tensor& Tape::value(std::uint32_t id) const {
  const Node& n = nodes_[id];
  return n.external ? *n.external : n.owned;
}

const Tensor& Tape::grad(std::uint32_t id) const {
  const Node& n = nodes_[id];
  return n.grad_external ? *n.grad_external : n.grad_owned;
}

Tensor* Tape::grad_sink(std::uint32_t id) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return nullptr;
  if (n.grad_external) return n.grad_external;
  if (!n.has_grad) {
    n.grad_owned = Tensor(value(id).shape());
    n.has_grad = true;
  }
  return &n.grad_owned;
}

void Tape::backward(Var loss) {
  if (loss.tape() != this) throw ContractError("loss belongs to a different tape");
  if (backward_done_) throw ContractError("backward() already ran on this tape");
  if (value(loss.id()).numel() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " + shape_str(value(loss.id()).shape()));
  }
  backward_done_ = true;
  Tensor* seed = grad_sink(loss.id());
  if (!seed) return;
  (*seed)[0] += 1.0;
  for (std::uint32_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || !n.backward) continue;
    if (!n.has_grad) continue;  // unreachable from loss
    n.backward(*this, i);
  }
}

}  // namespace mmkp
