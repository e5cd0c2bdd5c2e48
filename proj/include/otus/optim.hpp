#pragma once

#include <map>

#include "otus/nn.hpp"

namespace otus {

// Per-epoch linear learning-rate interpolation; reaches lr_end exactly at the
// final epoch index (epochs - 1).
inline double lr_linear(double lr_start, double lr_end, int epoch, int epochs) {
  if (epochs <= 1) return lr_start;
  int e = std::min(std::max(epoch, 0), epochs - 1);
  return lr_start + (lr_end - lr_start) * double(e) / double(epochs - 1);
}

template <class T>
class Adam {
 public:
  Adam(T beta1 = T(0.9), T beta2 = T(0.999), T eps = T(1e-8)) : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(ParameterStore<T>& store, T lr) {
    for (auto& [path, p] : store.params) {
      if (!p.has_grad()) continue;
      State& st = state_[path];
      if (st.m.size() != p.size()) {
        st.m.assign(p.size(), T(0));
        st.v.assign(p.size(), T(0));
        st.t = 0;
      }
      ++st.t;
      const T bc1 = T(1) - std::pow(beta1_, T(st.t));
      const T bc2 = T(1) - std::pow(beta2_, T(st.t));
      auto& val = p.data();
      const auto& g = p.grad();
      for (size_t i = 0; i < val.size(); ++i) {
        st.m[i] = beta1_ * st.m[i] + (T(1) - beta1_) * g[i];
        st.v[i] = beta2_ * st.v[i] + (T(1) - beta2_) * g[i] * g[i];
        val[i] -= lr * (st.m[i] / bc1) / (std::sqrt(st.v[i] / bc2) + eps_);
      }
    }
  }

 private:
  struct State {
    std::vector<T> m, v;
    long t = 0;
  };
  T beta1_, beta2_, eps_;
  std::map<std::string, State> state_;
};

}  // namespace otus
