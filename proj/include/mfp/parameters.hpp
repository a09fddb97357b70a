#pragma once

#include <map>
#include <string>
#include <vector>

#include "mfp/graph.hpp"

namespace mfp {

// Named learnable tensors in registration order. Names are unique.
template <typename T>
class ParameterSet {
 public:
  void add(const std::string& name, Tensor<T> value) {
    if (index_.count(name)) throw ContractError("duplicate parameter name '" + name + "'");
    index_.emplace(name, entries_.size());
    entries_.emplace_back(name, std::move(value));
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  const Tensor<T>& at(const std::string& name) const { return entries_[lookup(name)].second; }
  Tensor<T>& at(const std::string& name) { return entries_[lookup(name)].second; }

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& e : entries_) out.push_back(e.first);
    return out;
  }

  // Total scalar count over every tensor.
  std::int64_t scalar_count() const {
    std::int64_t n = 0;
    for (const auto& e : entries_) n += static_cast<std::int64_t>(e.second.numel());
    return n;
  }

  template <typename U>
  ParameterSet<U> cast() const {
    ParameterSet<U> out;
    for (const auto& [name, t] : entries_) out.add(name, t.template cast<U>());
    return out;
  }

  // Registers every tensor as a named leaf of `graph`.
  std::map<std::string, Var<T>> bind(Graph<T>& graph) const {
    std::map<std::string, Var<T>> vars;
    for (const auto& [name, t] : entries_) vars.emplace(name, graph.parameter(name, t));
    return vars;
  }

  friend bool operator==(const ParameterSet& a, const ParameterSet& b) { return a.entries_ == b.entries_; }

 private:
  std::size_t lookup(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("unknown parameter '" + name + "'");
    return it->second;
  }

  std::vector<std::pair<std::string, Tensor<T>>> entries_;
  std::map<std::string, std::size_t> index_;
};

template <typename T>
std::int64_t param_count(const ParameterSet<T>& params) {
  return params.scalar_count();
}

}  // namespace mfp
