#pragma once

#include "otus/tensor.hpp"

namespace otus {

// Cycle-consistency term: mean L1 of x - G(F(x)) plus mean L1 of y - F(G(y)),
// where G maps domain Y to X and F maps X to Y.
template <class T, class G, class F>
Tensor<T> cycle_loss(const Tensor<T>& x, const Tensor<T>& y, G&& g, F&& f) {
  auto x_rec = g(f(x));
  auto y_rec = f(g(y));
  check_same_shape("cycle_loss x", x, x_rec);
  check_same_shape("cycle_loss y", y, y_rec);
  return add(abs_mean(sub(x, x_rec)), abs_mean(sub(y, y_rec)));
}

// Least-squares discriminator loss, labels +1 for real and -1 for fake:
// mean (D(real) - 1)^2 + mean (D(fake) + 1)^2, averaged over batch and patch
// cells. The caller must sever gradient flow into the generator that produced
// `fake` (detach or NoGrad).
template <class T, class D>
Tensor<T> lsgan_disc_loss(const Tensor<T>& real, const Tensor<T>& fake, D&& disc) {
  auto loss_real = mean(square(add_const(disc(real), T(-1))));
  auto loss_fake = mean(square(add_const(disc(fake), T(1))));
  return add(loss_real, loss_fake);
}

// Least-squares generator loss targeting the real label: mean (D(fake) - 1)^2.
template <class T, class D>
Tensor<T> lsgan_gen_loss(const Tensor<T>& fake, D&& disc) {
  return mean(square(add_const(disc(fake), T(-1))));
}

}  // namespace otus
