#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "disent/checkpoint.hpp"
#include "disent/models.hpp"
#include "disent/tensor.hpp"

namespace disent {

// Adam with bias correction over a fixed list of named parameters. Moment
// buffers are exportable to / restorable from checkpoint entries so training
// can resume exactly.
template <typename T>
class Adam {
 public:
  Adam(std::vector<NamedParam<T>> params, T lr, T beta1 = T(0.9), T beta2 = T(0.999),
       T eps = T(1e-8))
      : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (auto& p : params_) {
      if (!p.tensor.requires_grad()) {
        throw std::invalid_argument("Adam: parameter " + p.name + " does not require gradients");
      }
      m_.emplace_back(static_cast<std::size_t>(p.tensor.numel()), T(0));
      v_.emplace_back(static_cast<std::size_t>(p.tensor.numel()), T(0));
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
  }

  void step() {
    ++t_;
    T bc1 = T(1) - std::pow(beta1_, static_cast<T>(t_));
    T bc2 = T(1) - std::pow(beta2_, static_cast<T>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& val = params_[i].tensor.mutable_value();
      const auto& g = params_[i].tensor.grad();
      auto& m = m_[i];
      auto& v = v_[i];
      for (std::size_t j = 0; j < val.size(); ++j) {
        m[j] = beta1_ * m[j] + (T(1) - beta1_) * g[j];
        v[j] = beta2_ * v[j] + (T(1) - beta2_) * g[j] * g[j];
        T mhat = m[j] / bc1;
        T vhat = v[j] / bc2;
        val[j] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
      }
    }
  }

  std::int64_t t() const { return t_; }
  T lr() const { return lr_; }
  void set_lr(T lr) { lr_ = lr; }

  // Appends "<prefix><param>.m", ".v" entries plus "<prefix>t".
  void export_state(std::vector<TensorEntry>& out, const std::string& prefix) const {
    for (std::size_t i = 0; i < params_.size(); ++i) {
      out.push_back(make_entry<T>(prefix + params_[i].name + ".m", params_[i].tensor.shape(), m_[i]));
      out.push_back(make_entry<T>(prefix + params_[i].name + ".v", params_[i].tensor.shape(), v_[i]));
    }
    out.push_back(make_entry<double>(prefix + "t", {1}, {static_cast<double>(t_)}));
  }

  void import_state(const CheckpointData& cp, const std::string& prefix) {
    for (std::size_t i = 0; i < params_.size(); ++i) {
      const TensorEntry* em = cp.find(prefix + params_[i].name + ".m");
      const TensorEntry* ev = cp.find(prefix + params_[i].name + ".v");
      if (!em || !ev) {
        throw std::runtime_error("checkpoint is missing optimizer state for " + params_[i].name);
      }
      read_entry_into<T>(*em, params_[i].tensor.shape(), m_[i]);
      read_entry_into<T>(*ev, params_[i].tensor.shape(), v_[i]);
    }
    const TensorEntry* et = cp.find(prefix + "t");
    if (!et) throw std::runtime_error("checkpoint is missing optimizer step counter " + prefix + "t");
    std::vector<double> tv;
    read_entry_into<double>(*et, {1}, tv);
    t_ = static_cast<std::int64_t>(tv[0]);
  }

 private:
  std::vector<NamedParam<T>> params_;
  T lr_, beta1_, beta2_, eps_;
  std::vector<std::vector<T>> m_, v_;
  std::int64_t t_ = 0;
};

}  // namespace disent
