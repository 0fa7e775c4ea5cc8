#pragma once
// Named learnable tensors with Adam state. Iteration order is insertion
// order, which fixes the optimizer update order and the checkpoint layout.

#include <string>
#include <unordered_map>
#include <vector>

#include "bisplat/tensor.hpp"

namespace bisplat {

enum class ParamGroup : uint8_t { network = 0, position = 1, shape = 2, opacity = 3 };
constexpr int kParamGroups = 4;

template <class T>
class ParamStore {
 public:
  struct Entry {
    std::string name;
    ParamGroup group;
    Tensor<T> value;
    Tensor<T> m, v;  // Adam moments
  };

  int add(const std::string& name, Tensor<T> value, ParamGroup group) {
    if (index_.count(name)) fail(strf("param store: duplicate name '%s'", name.c_str()));
    Entry e;
    e.name = name;
    e.group = group;
    e.m = Tensor<T>(value.rows, value.cols);
    e.v = Tensor<T>(value.rows, value.cols);
    e.value = std::move(value);
    entries_.push_back(std::move(e));
    index_[name] = int(entries_.size()) - 1;
    return int(entries_.size()) - 1;
  }

  Entry& at(int i) { return entries_[i]; }
  const Entry& at(int i) const { return entries_[i]; }
  int size() const { return int(entries_.size()); }

  Entry& get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) fail(strf("param store: unknown name '%s'", name.c_str()));
    return entries_[it->second];
  }
  const Entry& get(const std::string& name) const {
    return const_cast<ParamStore*>(this)->get(name);
  }
  bool has(const std::string& name) const { return index_.count(name) != 0; }

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, int> index_;
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// One Adam update for a single tensor; t is the 1-based step count.
template <class T>
void adam_update(Tensor<T>& value, Tensor<T>& m, Tensor<T>& v, const T* grad, double lr,
                 int64_t t, const AdamConfig& cfg) {
  const T b1 = T(cfg.beta1), b2 = T(cfg.beta2);
  const T c1 = T(1.0 / (1.0 - std::pow(cfg.beta1, double(t))));
  const T c2 = T(1.0 / (1.0 - std::pow(cfg.beta2, double(t))));
  const T step = T(lr), eps = T(cfg.eps);
  for (size_t i = 0; i < value.size(); ++i) {
    const T g = grad[i];
    m.v[i] = b1 * m.v[i] + (T(1) - b1) * g;
    v.v[i] = b2 * v.v[i] + (T(1) - b2) * g * g;
    const T mh = m.v[i] * c1;
    const T vh = v.v[i] * c2;
    value.v[i] -= step * mh / (std::sqrt(vh) + eps);
  }
}

}  // namespace bisplat
