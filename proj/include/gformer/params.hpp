// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "gformer/tensor.hpp"

namespace gformer {

/// Named, insertion-ordered parameter table. Order is part of the checkpoint
/// format and of the optimizer state layout.
template <typename T>
class ParameterStore {
 public:
  struct Entry {
    std::string name;
    Tensor<T> tensor;
  };

  Tensor<T>& add(std::string name, Tensor<T> tensor) {
    if (index_.contains(name)) throw ConfigError("duplicate parameter name '" + name + "'");
    if (!tensor.requires_grad()) tensor = Tensor<T>(tensor.shape(), tensor.values(), true);
    index_.emplace(name, entries_.size());
    entries_.push_back({std::move(name), std::move(tensor)});
    return entries_.back().tensor;
  }

  bool contains(std::string_view name) const { return index_.contains(std::string(name)); }

  const Tensor<T>& at(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) throw ConfigError("unknown parameter '" + std::string(name) + "'");
    return entries_[it->second].tensor;
  }
  Tensor<T>& at(std::string_view name) {
    return const_cast<Tensor<T>&>(std::as_const(*this).at(name));
  }

  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries() { return entries_; }
  std::size_t size() const { return entries_.size(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.tensor.numel();
    return n;
  }

  /// Handles to every tensor whose name starts with one of `prefixes`
  /// (all tensors when `prefixes` is empty).
  std::vector<Tensor<T>> tensors(const std::vector<std::string>& prefixes = {}) const {
    std::vector<Tensor<T>> out;
    for (const auto& e : entries_) {
      bool keep = prefixes.empty();
      for (const auto& p : prefixes) keep = keep || e.name.starts_with(p);
      if (keep) out.push_back(e.tensor);
    }
    return out;
  }

  void zero_grad() {
    for (auto& e : entries_) e.tensor.zero_grad();
  }

  /// Deep copy with independent storage, optionally at another precision.
  template <typename U>
  ParameterStore<U> cast() const {
    ParameterStore<U> out;
    for (const auto& e : entries_) {
      std::vector<U> values(e.tensor.values().begin(), e.tensor.values().end());
      out.add(e.name, Tensor<U>(e.tensor.shape(), std::move(values), true));
    }
    return out;
  }

  ParameterStore clone() const { return cast<T>(); }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Seeded initializers. The generator is consumed in call order, so a fixed
/// construction sequence reproduces identical weights.
class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : rng_(seed) {}

  /// Normal(0, gain^2 / fan_in) entries.
  std::vector<float> he_normal(const Shape& shape, std::size_t fan_in, double gain = 1.0) {
    std::vector<float> values(numel(shape));
    const double stddev = gain / std::sqrt(static_cast<double>(std::max<std::size_t>(fan_in, 1)));
    for (auto& v : values) v = static_cast<float>(stddev * normal());
    return values;
  }

  double normal() {
    // Box-Muller over raw 64-bit draws; std::normal_distribution differs between
    // standard libraries, this does not.
    const double u1 = (static_cast<double>(rng_() >> 11) + 0.5) * 0x1.0p-53;
    const double u2 = static_cast<double>(rng_() >> 11) * 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  std::mt19937_64& engine() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

}  // namespace gformer
