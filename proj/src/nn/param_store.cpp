#include "btr/nn/param_store.hpp"

#include <cmath>

#include "btr/common/error.hpp"

namespace btr::nn {

void ParamStore::add(const std::string& name, Tensor init, bool trainable) {
  if (contains(name)) throw ArgumentError("parameter '" + name + "' registered twice");
  ParamEntry e;
  e.grad = Tensor(init.shape());
  e.adam_m = Tensor(init.shape());
  e.adam_v = Tensor(init.shape());
  e.value = std::move(init);
  e.trainable = trainable;
  entries_.emplace(name, std::move(e));
}

ParamEntry& ParamStore::entry(const std::string& name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ArgumentError("unknown parameter '" + name + "'");
  return it->second;
}

const ParamEntry& ParamStore::entry(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ArgumentError("unknown parameter '" + name + "'");
  return it->second;
}

void ParamStore::zero_grad() {
  for (auto& [name, e] : entries_) e.grad.fill(0.0);
}

double ParamStore::grad_norm() const {
  double s = 0.0;
  for (const auto& [name, e] : entries_) {
    if (!e.trainable) continue;
    for (double g : e.grad.data()) s += g * g;
  }
  return std::sqrt(s);
}

double ParamStore::clip_grad_norm(double max_norm) {
  const double norm = grad_norm();
  if (max_norm > 0.0 && norm > max_norm) {
    const double f = max_norm / norm;
    for (auto& [name, e] : entries_)
      for (double& g : e.grad.data()) g *= f;
  }
  return norm;
}

std::size_t ParamStore::num_parameters() const {
  std::size_t n = 0;
  for (const auto& [name, e] : entries_) n += e.value.size();
  return n;
}

bool ParamStore::identical(const ParamStore& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  auto a = entries_.begin();
  auto b = other.entries_.begin();
  for (; a != entries_.end(); ++a, ++b) {
    if (a->first != b->first || !a->second.value.identical(b->second.value)) return false;
  }
  return true;
}

ParamBinder::ParamBinder(ParamStore& store, bool track) : store_(&store), mutable_store_(&store), track_(track) {}

ParamBinder::ParamBinder(const ParamStore& store) : store_(&store), mutable_store_(nullptr), track_(false) {}

Var ParamBinder::operator()(const std::string& name) {
  auto it = cache_.find(name);
  if (it != cache_.end()) return it->second;
  Var v;
  if (track_ && store_->entry(name).trainable) {
    ParamEntry& e = mutable_store_->entry(name);
    v = leaf(e.value, &e.grad);
  } else {
    v = constant(store_->entry(name).value);
  }
  cache_.emplace(name, v);
  return v;
}

}  // namespace btr::nn
