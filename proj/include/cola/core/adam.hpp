#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <string>

#include "cola/core/autograd.hpp"

namespace cola {

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.99;
  double eps = 1e-8;
};

// Adam with per-parameter learning rates chosen by a group function
// (parameter name -> group index).
template <class T>
class Adam {
 public:
  struct Slot {
    Mat<T> m, v;
  };

  explicit Adam(AdamOptions opts = {}) : opts_(opts) {}

  // lrs[g] is the rate for group g; group_of maps a parameter name to g.
  void step(ParamStore<T>& ps, const std::vector<double>& lrs, const std::function<int(const std::string&)>& group_of) {
    ++t_;
    const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
    const T b1 = static_cast<T>(opts_.beta1), b2 = static_cast<T>(opts_.beta2);
    for (auto& [name, p] : ps) {
      if (!p.trainable || p.grad.size() == 0) continue;
      auto& s = slots_[name];
      if (s.m.size() == 0) {
        s.m.setZero(p.value.rows(), p.value.cols());
        s.v.setZero(p.value.rows(), p.value.cols());
      }
      s.m = b1 * s.m + (T(1) - b1) * p.grad;
      s.v = b2 * s.v + (T(1) - b2) * p.grad.cwiseProduct(p.grad);
      const T lr = static_cast<T>(lrs.at(static_cast<std::size_t>(group_of(name))) / bc1);
      const T inv_bc2 = static_cast<T>(1.0 / bc2);
      const T eps = static_cast<T>(opts_.eps);
      p.value.array() -= lr * s.m.array() / ((s.v.array() * inv_bc2).sqrt() + eps);
    }
  }

  void step(ParamStore<T>& ps, double lr) {
    step(ps, {lr}, [](const std::string&) { return 0; });
  }

  long long steps() const { return t_; }
  void set_steps(long long t) { t_ = t; }
  std::map<std::string, Slot>& slots() { return slots_; }
  const std::map<std::string, Slot>& slots() const { return slots_; }
  const AdamOptions& options() const { return opts_; }

 private:
  AdamOptions opts_;
  long long t_ = 0;
  std::map<std::string, Slot> slots_;
};

}  // namespace cola
