#pragma once

#include <algorithm>

#include "otus/tensor.hpp"

namespace otus {

inline double rel_err(double a, double b, double floor_) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor_});
}

// Uniform values in [lo, hi] with |v| >= min_abs, for sampling inputs away
// from ReLU/abs kinks.
template <class T>
Tensor<T> random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0, double min_abs = 0.0,
                        bool requires_grad = false) {
  std::vector<T> v(shape_numel(shape));
  for (auto& x : v) {
    double u;
    do {
      u = rng.uniform(lo, hi);
    } while (std::abs(u) < min_abs);
    x = T(u);
  }
  return Tensor<T>::from_data(std::move(shape), std::move(v), requires_grad);
}

// Central finite differences, coordinate by coordinate, against the autodiff
// gradient of the scalar loss f(). Returns the worst relative error.
// f() must recompute the loss from the current values of `wrt`.
template <class T, class Fn>
double fd_check_coords(std::vector<Tensor<T>> wrt, Fn&& f, T h, double floor_) {
  for (auto& t : wrt) t.zero_grad();
  backward(f());
  double worst = 0;
  for (auto& t : wrt) {
    std::vector<T> g = t.grad();
    for (size_t i = 0; i < t.size(); ++i) {
      const T saved = t.data()[i];
      double lp, lm;
      {
        NoGrad ng;
        t.data()[i] = saved + h;
        lp = double(f().item());
        t.data()[i] = saved - h;
        lm = double(f().item());
      }
      t.data()[i] = saved;
      double fd = (lp - lm) / (2.0 * double(h));
      worst = std::max(worst, rel_err(double(g[i]), fd, floor_));
    }
  }
  return worst;
}

// Central finite difference along one random unit direction spread over all
// coordinates of `wrt` (a Jacobian-vector product check).
template <class T, class Fn>
double fd_check_direction(std::vector<Tensor<T>> wrt, Fn&& f, T h, double floor_, Rng& rng) {
  size_t total = 0;
  for (auto& t : wrt) total += t.size();
  std::vector<double> dir(total);
  double norm = 0;
  for (auto& d : dir) {
    d = rng.normal();
    norm += d * d;
  }
  norm = std::sqrt(norm);
  for (auto& d : dir) d /= norm;

  for (auto& t : wrt) t.zero_grad();
  backward(f());
  double dot = 0;
  {
    size_t off = 0;
    for (auto& t : wrt) {
      const auto& g = t.grad();
      for (size_t i = 0; i < t.size(); ++i) dot += double(g[i]) * dir[off + i];
      off += t.size();
    }
  }

  auto shift = [&](double sign) {
    size_t off = 0;
    for (auto& t : wrt) {
      for (size_t i = 0; i < t.size(); ++i) t.data()[i] += T(sign * double(h) * dir[off + i]);
      off += t.size();
    }
  };
  double lp, lm;
  {
    NoGrad ng;
    shift(+1);
    lp = double(f().item());
    shift(-2);
    lm = double(f().item());
    shift(+1);
  }
  double fd = (lp - lm) / (2.0 * double(h));
  return rel_err(dot, fd, floor_);
}

}  // namespace otus
