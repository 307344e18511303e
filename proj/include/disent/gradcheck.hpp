#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "disent/ops.hpp"
#include "disent/tensor.hpp"

namespace disent {

template <typename T>
struct GradCheckReport {
  T max_rel_err = T(0);
  std::size_t worst_leaf = 0;
  std::size_t worst_coord = 0;
  T analytic = T(0);
  T numeric = T(0);
};

// Compares the analytic gradient of a scalar objective against central finite
// differences, coordinate by coordinate, over the given leaves. The objective
// must rebuild its graph from the current leaf values on every call. Relative
// error is |a - n| / (|a| + |n| + denom_eps).
template <typename T, typename F>
GradCheckReport<T> gradcheck(F&& objective, const std::vector<Tensor<T>>& leaves, T delta,
                             T denom_eps = T(1e-8)) {
  for (auto& l : leaves) {
    if (!l.requires_grad()) throw std::invalid_argument("gradcheck: every leaf must require grad");
    const_cast<Tensor<T>&>(l).zero_grad();
  }
  Tensor<T> y = objective();
  y.backward();
  std::vector<std::vector<T>> analytic;
  analytic.reserve(leaves.size());
  for (const auto& l : leaves) analytic.push_back(l.grad());

  GradCheckReport<T> rep;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    auto& vals = const_cast<Tensor<T>&>(leaves[li]).mutable_value();
    for (std::size_t j = 0; j < vals.size(); ++j) {
      T orig = vals[j];
      T yp, ym;
      {
        NoGradGuard ng;
        vals[j] = orig + delta;
        yp = objective().item();
        vals[j] = orig - delta;
        ym = objective().item();
        vals[j] = orig;
      }
      T numeric = (yp - ym) / (T(2) * delta);
      T a = analytic[li][j];
      T rel = std::abs(a - numeric) / (std::abs(a) + std::abs(numeric) + denom_eps);
      if (rel > rep.max_rel_err) {
        rep.max_rel_err = rel;
        rep.worst_leaf = li;
        rep.worst_coord = j;
        rep.analytic = a;
        rep.numeric = numeric;
      }
    }
  }
  return rep;
}

}  // namespace disent
