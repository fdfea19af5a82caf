#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <unordered_map>

#include "btr/nn/autodiff.hpp"
#include "btr/nn/tensor.hpp"

namespace btr::nn {

struct ParamEntry {
  Tensor value;
  Tensor grad;
  Tensor adam_m;
  Tensor adam_v;
  bool trainable = true;
};

/// Named parameters with parallel gradient and optimizer-moment buffers.
/// Iteration is in name order.
class ParamStore {
 public:
  using Map = std::map<std::string, ParamEntry>;

  void add(const std::string& name, Tensor init, bool trainable = true);
  bool contains(const std::string& name) const { return entries_.count(name) != 0; }

  ParamEntry& entry(const std::string& name);
  const ParamEntry& entry(const std::string& name) const;
  Tensor& value(const std::string& name) { return entry(name).value; }
  const Tensor& value(const std::string& name) const { return entry(name).value; }
  Tensor& grad(const std::string& name) { return entry(name).grad; }
  void set_trainable(const std::string& name, bool trainable) { entry(name).trainable = trainable; }

  void zero_grad();
  double grad_norm() const;
  /// Rescales gradients so their global L2 norm is at most max_norm.
  /// Returns the norm before clipping.
  double clip_grad_norm(double max_norm);

  std::size_t num_parameters() const;
  std::size_t size() const { return entries_.size(); }
  Map::iterator begin() { return entries_.begin(); }
  Map::iterator end() { return entries_.end(); }
  Map::const_iterator begin() const { return entries_.begin(); }
  Map::const_iterator end() const { return entries_.end(); }

  /// Adam step counter.
  long step = 0;

  /// True when names, shapes and values match bitwise.
  bool identical(const ParamStore& other) const;

 private:
  Map entries_;
};

/// Hands out one graph leaf per parameter name for the lifetime of a
/// computation. A tracking binder routes leaf gradients into the store's
/// gradient buffers; a non-tracking binder hands out constants and may be
/// reused across many forward passes.
class ParamBinder {
 public:
  ParamBinder(ParamStore& store, bool track);
  explicit ParamBinder(const ParamStore& store);

  Var operator()(const std::string& name);
  bool tracking() const { return track_; }

 private:
  const ParamStore* store_;
  ParamStore* mutable_store_;
  bool track_;
  std::unordered_map<std::string, Var> cache_;
};

}  // namespace btr::nn
