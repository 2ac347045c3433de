#pragma once

// Named dense tensors with a stable flattening order. This is the whole
// parameter substrate: models register tensors by name at construction and
// the optimizer, checkpointing, and finite-difference checks all work on the
// flattened view.

#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "dgdpo/common.hpp"

namespace dgdpo {

struct Tensor {
  std::string name;
  std::vector<size_t> shape;
  std::vector<double> data;

  size_t size() const { return data.size(); }
  double& at(size_t i) { return data[i]; }
  double at(size_t i) const { return data[i]; }
  // Row-major 2-D access.
  double& at(size_t r, size_t c) { return data[r * shape[1] + c]; }
  double at(size_t r, size_t c) const { return data[r * shape[1] + c]; }
};

class ParamStore {
 public:
  Tensor& add(const std::string& name, std::vector<size_t> shape) {
    require(!index_.count(name), "ParamStore: duplicate tensor name " + name);
    size_t n = 1;
    for (size_t d : shape) n *= d;
    tensors_.push_back(Tensor{name, std::move(shape), std::vector<double>(n, 0.0)});
    index_[name] = tensors_.size() - 1;
    return tensors_.back();
  }

  bool has(const std::string& name) const { return index_.count(name) != 0; }

  Tensor& at(const std::string& name) {
    auto it = index_.find(name);
    require(it != index_.end(), "ParamStore: unknown tensor " + name);
    return tensors_[it->second];
  }
  const Tensor& at(const std::string& name) const {
    auto it = index_.find(name);
    require(it != index_.end(), "ParamStore: unknown tensor " + name);
    return tensors_[it->second];
  }

  const std::vector<Tensor>& tensors() const { return tensors_; }
  std::vector<Tensor>& tensors() { return tensors_; }

  size_t total_params() const {
    size_t n = 0;
    for (const auto& t : tensors_) n += t.size();
    return n;
  }

  std::vector<double> flatten() const {
    std::vector<double> out;
    out.reserve(total_params());
    for (const auto& t : tensors_) out.insert(out.end(), t.data.begin(), t.data.end());
    return out;
  }

  void unflatten(std::span<const double> flat) {
    require(flat.size() == total_params(), "ParamStore: flat size mismatch");
    size_t off = 0;
    for (auto& t : tensors_) {
      std::copy(flat.begin() + static_cast<long>(off),
                flat.begin() + static_cast<long>(off + t.size()), t.data.begin());
      off += t.size();
    }
  }

  // A zero-filled store with identical names and shapes (gradient buffers,
  // optimizer accumulators).
  ParamStore zeros_like() const {
    ParamStore g;
    for (const auto& t : tensors_) g.add(t.name, t.shape);
    return g;
  }

  bool same_layout(const ParamStore& other) const {
    if (tensors_.size() != other.tensors_.size()) return false;
    for (size_t i = 0; i < tensors_.size(); ++i) {
      if (tensors_[i].name != other.tensors_[i].name) return false;
      if (tensors_[i].shape != other.tensors_[i].shape) return false;
    }
    return true;
  }

 private:
  std::vector<Tensor> tensors_;
  std::unordered_map<std::string, size_t> index_;
};

// Gradients share the exact keyed structure of their ParamStore.
using GradStore = ParamStore;

}  // namespace dgdpo
