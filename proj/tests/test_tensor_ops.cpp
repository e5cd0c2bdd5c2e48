#include <vector>

#include "doctest.h"
#include "otus/gradcheck.hpp"
#include "otus/nn_ops.hpp"
#include "otus/tensor.hpp"

using namespace otus;

TEST_CASE("conv2d: sum of ones through all-ones kernel, valid padding") {
  auto x = Tensor<float>::full({1, 1, 3, 3}, 1.0f);
  auto k = Tensor<float>::full({1, 1, 3, 3}, 1.0f);
  auto y = conv2d(x, k, 1, Padding::Valid);
  CHECK(y.shape() == Shape{1, 1, 1, 1});
  CHECK(y.item() == doctest::Approx(9.0));
}

TEST_CASE("conv2d: identity kernel with same padding reproduces the input") {
  Rng rng(3);
  auto x = random_tensor<float>(rng, {2, 1, 5, 7});
  auto k = Tensor<float>::zeros({1, 1, 3, 3});
  k.data()[4] = 1.0f;  // center tap
  auto y = conv2d(x, k, 1, Padding::Same);
  REQUIRE(y.shape() == x.shape());
  for (size_t i = 0; i < x.size(); ++i) CHECK(y.data()[i] == x.data()[i]);
}

TEST_CASE("conv2d: channel mismatch is rejected") {
  auto x = Tensor<float>::zeros({1, 2, 4, 4});
  auto k = Tensor<float>::zeros({3, 1, 3, 3});
  CHECK_THROWS_AS(conv2d(x, k), std::invalid_argument);
}

TEST_CASE("conv2d: stride-2 same padding output sizes") {
  auto x = Tensor<float>::zeros({1, 1, 64, 64});
  auto k = Tensor<float>::zeros({1, 1, 3, 3});
  CHECK(conv2d(x, k, 2, Padding::Same).shape() == Shape{1, 1, 32, 32});
  auto odd = Tensor<float>::zeros({1, 1, 5, 5});
  CHECK(conv2d(odd, k, 2, Padding::Same).shape() == Shape{1, 1, 3, 3});
  CHECK(conv2d(Tensor<float>::zeros({1, 1, 1, 1}), k, 2, Padding::Same).shape() == Shape{1, 1, 1, 1});
}

TEST_CASE("conv2d: gradient matches finite differences") {
  SUBCASE("float32, tolerance 1e-3") {
    Rng rng(11);
    auto x = random_tensor<float>(rng, {2, 3, 8, 8}, -1, 1, 0, true);
    auto k = random_tensor<float>(rng, {4, 3, 3, 3}, -1, 1, 0, true);
    auto w = random_tensor<float>(rng, {2, 4, 8, 8});
    auto f = [&] { return sum(mul(conv2d(x, k, 1, Padding::Same), w)); };
    CHECK(fd_check_coords<float>({x, k}, f, 3e-3f, 1e-2) < 1e-3);
  }
  SUBCASE("float64, tolerance 1e-5") {
    Rng rng(12);
    auto x = random_tensor<double>(rng, {2, 3, 8, 8}, -1, 1, 0, true);
    auto k = random_tensor<double>(rng, {4, 3, 3, 3}, -1, 1, 0, true);
    auto w = random_tensor<double>(rng, {2, 4, 8, 8});
    auto f = [&] { return sum(mul(conv2d(x, k, 2, Padding::Valid), w)); };
    CHECK(fd_check_coords<double>({x, k}, f, 1e-6, 1e-6) < 1e-5);
  }
}

TEST_CASE("batchnorm2d: constant input collapses to beta") {
  auto x = Tensor<float>::full({2, 3, 4, 4}, 7.5f);
  auto gamma = Tensor<float>::full({3}, 2.0f);
  auto beta = Tensor<float>::from_data({3}, {0.5f, -1.0f, 3.0f});
  auto rm = Tensor<float>::zeros({3});
  auto rv = Tensor<float>::full({3}, 1.0f);
  auto y = batchnorm2d(x, gamma, beta, rm, rv, BnMode::Train);
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < 16; ++i) CHECK(y.data()[size_t(c) * 16 + i] == doctest::Approx(beta.data()[size_t(c)]));
}

TEST_CASE("batchnorm2d: normalizes to zero mean, unit variance") {
  Rng rng(5);
  auto x = random_tensor<float>(rng, {4, 2, 6, 6}, -3, 3);
  auto gamma = Tensor<float>::full({2}, 1.0f);
  auto beta = Tensor<float>::zeros({2});
  auto rm = Tensor<float>::zeros({2});
  auto rv = Tensor<float>::full({2}, 1.0f);
  auto y = batchnorm2d(x, gamma, beta, rm, rv, BnMode::Train);
  const int HW = 36, N = 4, C = 2;
  for (int c = 0; c < C; ++c) {
    double s = 0, s2 = 0;
    for (int n = 0; n < N; ++n)
      for (int i = 0; i < HW; ++i) {
        double v = y.data()[(size_t(n) * C + c) * HW + i];
        s += v;
        s2 += v * v;
      }
    double m = s / (N * HW), var = s2 / (N * HW) - m * m;
    CHECK(std::abs(m) < 1e-5);
    CHECK(std::abs(var - 1.0) < 1e-3);  // eps shifts variance slightly below 1
  }
}

TEST_CASE("batchnorm2d: single sample per channel in train mode is degenerate") {
  auto x = Tensor<float>::zeros({1, 3, 1, 1});
  auto gamma = Tensor<float>::full({3}, 1.0f);
  auto beta = Tensor<float>::zeros({3});
  auto rm = Tensor<float>::zeros({3});
  auto rv = Tensor<float>::full({3}, 1.0f);
  CHECK_THROWS_AS(batchnorm2d(x, gamma, beta, rm, rv, BnMode::Train), DegenerateVariance);
}

TEST_CASE("batchnorm2d: gradient matches finite differences") {
  Rng rng(7);
  auto x = random_tensor<double>(rng, {2, 2, 4, 4}, -2, 2, 0, true);
  auto gamma = random_tensor<double>(rng, {2}, 0.5, 1.5, 0, true);
  auto beta = random_tensor<double>(rng, {2}, -0.5, 0.5, 0, true);
  auto w = random_tensor<double>(rng, {2, 2, 4, 4});
  auto rm = Tensor<double>::zeros({2});
  auto rv = Tensor<double>::full({2}, 1.0);
  SUBCASE("train mode") {
    auto f = [&] { return sum(mul(batchnorm2d(x, gamma, beta, rm, rv, BnMode::Train), w)); };
    CHECK(fd_check_coords<double>({x, gamma, beta}, f, 1e-6, 1e-6) < 1e-5);
  }
  SUBCASE("eval mode") {
    rm = random_tensor<double>(rng, {2}, -0.5, 0.5);
    rv = random_tensor<double>(rng, {2}, 0.5, 1.5);
    auto f = [&] { return sum(mul(batchnorm2d(x, gamma, beta, rm, rv, BnMode::Eval), w)); };
    CHECK(fd_check_coords<double>({x, gamma, beta}, f, 1e-6, 1e-6) < 1e-5);
  }
}

TEST_CASE("relu and leaky_relu point values") {
  auto x = Tensor<float>::from_data({2}, {-2.0f, 3.0f});
  auto r = relu(x);
  CHECK(r.data()[0] == 0.0f);
  CHECK(r.data()[1] == 3.0f);
  auto l = leaky_relu(x, 0.2f);
  CHECK(l.data()[0] == doctest::Approx(-0.4));
  CHECK(l.data()[1] == 3.0f);
}

TEST_CASE("activations: gradients away from kinks") {
  Rng rng(9);
  auto x = random_tensor<double>(rng, {3, 4}, -1, 1, 0.05, true);
  SUBCASE("relu") {
    auto w = random_tensor<double>(rng, {3, 4});
    auto f = [&] { return sum(mul(relu(x), w)); };
    CHECK(fd_check_coords<double>({x}, f, 1e-6, 1e-6) < 1e-5);
  }
  SUBCASE("leaky_relu") {
    auto w = random_tensor<double>(rng, {3, 4});
    auto f = [&] { return sum(mul(leaky_relu(x, 0.2), w)); };
    CHECK(fd_check_coords<double>({x}, f, 1e-6, 1e-6) < 1e-5);
  }
  SUBCASE("abs") {
    auto f = [&] { return abs_mean(x); };
    CHECK(fd_check_coords<double>({x}, f, 1e-6, 1e-6) < 1e-5);
  }
}

TEST_CASE("maxpool2d point case and tie-breaking") {
  auto x = Tensor<float>::from_data({1, 1, 2, 2}, {1, 2, 3, 4});
  auto y = maxpool2d(x);
  CHECK(y.shape() == Shape{1, 1, 1, 1});
  CHECK(y.item() == 4.0f);

  // ties route the gradient to the lowest linear index
  auto t = Tensor<float>::full({1, 1, 2, 2}, 5.0f, true);
  auto loss = sum(maxpool2d(t));
  backward(loss);
  CHECK(t.grad()[0] == 1.0f);
  CHECK(t.grad()[1] == 0.0f);
  CHECK(t.grad()[2] == 0.0f);
  CHECK(t.grad()[3] == 0.0f);
}

TEST_CASE("maxpool2d rejects indivisible extents") {
  auto x = Tensor<float>::zeros({1, 1, 5, 4});
  CHECK_THROWS_AS(maxpool2d(x), std::invalid_argument);
}

TEST_CASE("maxpool2d gradient (distinct window values)") {
  Rng rng(21);
  auto x = random_tensor<double>(rng, {2, 2, 4, 4}, -1, 1, 0, true);
  // spread values so no two window entries are within the FD step
  for (size_t i = 0; i < x.size(); ++i) x.data()[i] += double(i % 16) * 0.37;
  auto w = random_tensor<double>(rng, {2, 2, 2, 2});
  auto f = [&] { return sum(mul(maxpool2d(x), w)); };
  CHECK(fd_check_coords<double>({x}, f, 1e-6, 1e-6) < 1e-5);
}

TEST_CASE("upsample_nearest replicates cells") {
  auto x = Tensor<float>::from_data({1, 1, 1, 1}, {5.0f});
  auto y = upsample_nearest(x, 2);
  CHECK(y.shape() == Shape{1, 1, 2, 2});
  for (float v : y.data()) CHECK(v == 5.0f);

  Rng rng(2);
  auto z = random_tensor<double>(rng, {1, 2, 3, 3}, -1, 1, 0, true);
  auto w = random_tensor<double>(rng, {1, 2, 6, 6});
  auto f = [&] { return sum(mul(upsample_nearest(z, 2), w)); };
  CHECK(fd_check_coords<double>({z}, f, 1e-6, 1e-6) < 1e-5);
}

TEST_CASE("concat_channels shape arithmetic and gradient split") {
  auto a = Tensor<float>::zeros({2, 3, 4, 5});
  auto b = Tensor<float>::zeros({2, 5, 4, 5});
  CHECK(concat_channels(a, b).shape() == Shape{2, 8, 4, 5});
  CHECK_THROWS_AS(concat_channels(a, Tensor<float>::zeros({2, 5, 4, 4})), std::invalid_argument);

  Rng rng(14);
  auto x = random_tensor<double>(rng, {1, 2, 2, 2}, -1, 1, 0, true);
  auto y = random_tensor<double>(rng, {1, 3, 2, 2}, -1, 1, 0, true);
  auto w = random_tensor<double>(rng, {1, 5, 2, 2});
  auto f = [&] { return sum(mul(concat_channels(x, y), w)); };
  CHECK(fd_check_coords<double>({x, y}, f, 1e-6, 1e-6) < 1e-5);
}

TEST_CASE("elementwise suite point values") {
  auto x = Tensor<float>::from_data({3}, {1.0f, -1.0f, 2.0f});
  CHECK(abs_mean(sub(x, x)).item() == 0.0f);
  CHECK(mean(square(x)).item() == doctest::Approx(2.0));
  CHECK(sum(x).item() == doctest::Approx(2.0));
  CHECK_THROWS_AS(add(x, Tensor<float>::zeros({4})), std::invalid_argument);
}

TEST_CASE("elementwise composite gradient") {
  Rng rng(31);
  auto a = random_tensor<double>(rng, {4, 3}, 0.2, 1.5, 0, true);
  auto b = random_tensor<double>(rng, {4, 3}, 0.2, 1.5, 0, true);
  auto f = [&] {
    auto t = div(mul(add(a, b), sub(a, scale(b, 0.5))), add_const(square(b), 1.0));
    return add(mean(t), abs_mean(add_const(t, 0.3)));
  };
  CHECK(fd_check_coords<double>({a, b}, f, 1e-6, 1e-6) < 1e-5);
}

TEST_CASE("bias_add gradient") {
  Rng rng(17);
  auto x = random_tensor<double>(rng, {2, 3, 2, 2}, -1, 1, 0, true);
  auto b = random_tensor<double>(rng, {3}, -1, 1, 0, true);
  auto w = random_tensor<double>(rng, {2, 3, 2, 2});
  auto f = [&] { return sum(mul(bias_add(x, b), w)); };
  CHECK(fd_check_coords<double>({x, b}, f, 1e-6, 1e-6) < 1e-5);
}

TEST_CASE("backward: linear loss gives the weight as gradient") {
  auto w = Tensor<float>::from_data({3}, {2.0f, -1.0f, 0.5f});
  auto x = Tensor<float>::from_data({3}, {1.0f, 1.0f, 1.0f}, true);
  backward(sum(mul(w, x)));
  for (int i = 0; i < 3; ++i) CHECK(x.grad()[size_t(i)] == w.data()[size_t(i)]);
}

TEST_CASE("backward: diamond graph accumulates both paths") {
  auto x = Tensor<double>::from_data({2}, {1.5, -0.5}, true);
  auto f = scale(x, 3.0);
  auto g = square(x);
  backward(sum(add(f, g)));
  CHECK(x.grad()[0] == doctest::Approx(3.0 + 2.0 * 1.5));
  CHECK(x.grad()[1] == doctest::Approx(3.0 + 2.0 * -0.5));
}

TEST_CASE("backward: second call without reset doubles gradients") {
  auto x = Tensor<double>::from_data({2}, {2.0, 3.0}, true);
  auto loss = mean(square(x));
  backward(loss);
  auto g1 = x.grad();
  backward(loss);
  for (size_t i = 0; i < 2; ++i) CHECK(x.grad()[i] == doctest::Approx(2.0 * g1[i]));
}

TEST_CASE("backward rejects non-scalar losses") {
  auto x = Tensor<float>::zeros({2, 2}, true);
  CHECK_THROWS_AS(backward(square(x)), std::invalid_argument);
}

TEST_CASE("backward is bit-deterministic for a fixed graph") {
  auto run = [] {
    Rng rng(77);
    auto x = random_tensor<float>(rng, {2, 2, 8, 8}, -1, 1, 0, true);
    auto k = random_tensor<float>(rng, {3, 2, 3, 3}, -1, 1, 0, true);
    backward(abs_mean(relu(conv2d(x, k, 1, Padding::Same))));
    auto g = x.grad();
    auto gk = k.grad();
    g.insert(g.end(), gk.begin(), gk.end());
    return g;
  };
  auto a = run();
  auto b = run();
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("NoGrad suppresses tape construction") {
  auto x = Tensor<float>::full({2}, 1.0f, true);
  NoGrad ng;
  auto y = square(x);
  CHECK(!y.requires_grad());
}
