#pragma once

#include <map>
#include <string>

#include "otus/nn_ops.hpp"
#include "otus/tensor.hpp"

namespace otus {

// Named parameters (trainable) and buffers (running statistics), plus the
// metadata that goes into a checkpoint. Map order is the canonical iteration
// order everywhere (init, optimizer, serialization), which keeps runs
// reproducible.
template <class T>
struct ParameterStore {
  std::map<std::string, Tensor<T>> params;
  std::map<std::string, Tensor<T>> buffers;
  std::string spec_desc;
  uint64_t seed = 0;
  int epoch = 0;

  Tensor<T>& param(const std::string& path) {
    auto it = params.find(path);
    if (it == params.end()) throw std::invalid_argument("no parameter named " + path);
    return it->second;
  }
  Tensor<T>& buffer(const std::string& path) {
    auto it = buffers.find(path);
    if (it == buffers.end()) throw std::invalid_argument("no buffer named " + path);
    return it->second;
  }

  size_t parameter_count() const {
    size_t n = 0;
    for (const auto& [k, v] : params) n += v.size();
    return n;
  }

  uint64_t spec_hash() const { return fnv1a64(spec_desc); }

  // Hash over parameter values; used to assert that an update step touched
  // only the stores it was supposed to.
  uint64_t content_hash() const {
    uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& [k, v] : params) {
      h = fnv1a64(k, h);
      h = fnv1a64(v.data().data(), v.data().size() * sizeof(T), h);
    }
    return h;
  }

  void zero_grads() {
    for (auto& [k, v] : params) v.zero_grad();
  }
};

struct GeneratorSpec {
  int base_filters = 8;  // Gf: 8 for deconvolution/despeckle, 16 for MLA, 64 for missing-channel
  int depth = 9;         // encoder modules + bottleneck + decoder modules
  int in_channels = 1;
  int out_channels = 1;

  int encoder_modules() const { return (depth - 1) / 2; }

  void validate() const {
    if (base_filters < 1) throw std::invalid_argument("generator: base_filters must be >= 1");
    if (depth < 3 || depth % 2 == 0) throw std::invalid_argument("generator: depth must be odd and >= 3");
    if (in_channels < 1 || out_channels < 1) throw std::invalid_argument("generator: channels must be >= 1");
  }

  std::string describe() const {
    return "generator gf=" + std::to_string(base_filters) + " depth=" + std::to_string(depth) +
           " in=" + std::to_string(in_channels) + " out=" + std::to_string(out_channels);
  }
};

struct DiscriminatorSpec {
  int base_filters = 256;  // Df: 256 everywhere, 512 for the MLA experiments
  int blocks = 4;
  double leaky_slope = 0.2;

  void validate() const {
    if (base_filters < 1) throw std::invalid_argument("discriminator: base_filters must be >= 1");
    if (blocks < 1) throw std::invalid_argument("discriminator: blocks must be >= 1");
  }

  std::string describe() const {
    return "discriminator df=" + std::to_string(base_filters) + " blocks=" + std::to_string(blocks);
  }
};

namespace detail {

template <class T>
Tensor<T> init_weight(Rng& rng, Shape shape) {
  // Truncated normal, std 0.02, clipped at two standard deviations.
  std::vector<T> w(shape_numel(shape));
  for (auto& x : w) x = T(rng.truncated_normal(0.02));
  return Tensor<T>::from_data(std::move(shape), std::move(w), true);
}

template <class T>
void add_conv(ParameterStore<T>& s, Rng& rng, const std::string& p, int cout, int cin, int k, bool bias, bool bn) {
  s.params.emplace(p + ".w", init_weight<T>(rng, {cout, cin, k, k}));
  if (bias) s.params.emplace(p + ".b", Tensor<T>::zeros({cout}, true));
  if (bn) {
    s.params.emplace(p + ".bn.g", Tensor<T>::full({cout}, T(1), true));
    s.params.emplace(p + ".bn.b", Tensor<T>::zeros({cout}, true));
    s.buffers.emplace(p + ".bn.rm", Tensor<T>::zeros({cout}));
    s.buffers.emplace(p + ".bn.rv", Tensor<T>::full({cout}, T(1)));
  }
}

}  // namespace detail

// U-Net generator: `depth` modules of three 3x3 convolutions each
// (conv + batchnorm + ReLU), channel width doubling down the encoder and
// halving up the decoder, skip connections by channel concatenation, and a
// final linear 1x1 convolution back to `out_channels`.
template <class T>
class Generator {
 public:
  Generator(GeneratorSpec spec, uint64_t seed) : spec_(spec) {
    spec_.validate();
    Rng rng(mix_seed(seed, 0x67656eull));
    const int E = spec_.encoder_modules();
    int prev = spec_.in_channels;
    for (int e = 0; e < E; ++e) prev = add_module(rng, "enc" + std::to_string(e), prev, spec_.base_filters << e);
    prev = add_module(rng, "mid", prev, spec_.base_filters << E);
    for (int d = 0; d < E; ++d) {
      int skip = spec_.base_filters << (E - 1 - d);
      prev = add_module(rng, "dec" + std::to_string(d), prev + skip, skip);
    }
    detail::add_conv(store_, rng, "out", spec_.out_channels, prev, 1, /*bias=*/true, /*bn=*/false);
    store_.spec_desc = spec_.describe();
    store_.seed = seed;
  }

  Generator(GeneratorSpec spec, ParameterStore<T> store) : spec_(spec), store_(std::move(store)) {
    spec_.validate();
    if (store_.spec_desc != spec_.describe())
      throw std::invalid_argument("generator: checkpoint spec '" + store_.spec_desc + "' does not match '" +
                                  spec_.describe() + "'");
  }

  Tensor<T> forward(const Tensor<T>& x, BnMode mode) {
    if (x.rank() != 4 || x.dim(1) != spec_.in_channels)
      throw std::invalid_argument("generator: expected input [N," + std::to_string(spec_.in_channels) + ",H,W], got " +
                                  shape_str(x.shape()));
    const int E = spec_.encoder_modules();
    const int div = 1 << E;
    if (x.dim(2) % div != 0 || x.dim(3) % div != 0)
      throw std::invalid_argument("generator: spatial extents " + shape_str(x.shape()) + " not divisible by " +
                                  std::to_string(div));
    std::vector<Tensor<T>> skips;
    Tensor<T> h = x;
    for (int e = 0; e < E; ++e) {
      h = run_module(h, "enc" + std::to_string(e), mode);
      skips.push_back(h);
      h = maxpool2d(h, 2, 2);
    }
    h = run_module(h, "mid", mode);
    for (int d = 0; d < E; ++d) {
      h = upsample_nearest(h, 2);
      h = concat_channels(h, skips[size_t(E - 1 - d)]);
      h = run_module(h, "dec" + std::to_string(d), mode);
    }
    return bias_add(conv2d(h, store_.param("out.w"), 1, Padding::Same), store_.param("out.b"));
  }

  const GeneratorSpec& spec() const { return spec_; }
  ParameterStore<T>& store() { return store_; }
  const ParameterStore<T>& store() const { return store_; }

 private:
  int add_module(Rng& rng, const std::string& p, int cin, int width) {
    detail::add_conv(store_, rng, p + ".c0", width, cin, 3, false, true);
    detail::add_conv(store_, rng, p + ".c1", width, width, 3, false, true);
    detail::add_conv(store_, rng, p + ".c2", width, width, 3, false, true);
    return width;
  }

  Tensor<T> run_module(Tensor<T> h, const std::string& p, BnMode mode) {
    for (int c = 0; c < 3; ++c) {
      std::string cp = p + ".c" + std::to_string(c);
      h = conv2d(h, store_.param(cp + ".w"), 1, Padding::Same);
      h = batchnorm2d(h, store_.param(cp + ".bn.g"), store_.param(cp + ".bn.b"), store_.buffer(cp + ".bn.rm"),
                      store_.buffer(cp + ".bn.rv"), mode);
      h = relu(h);
    }
    return h;
  }

  GeneratorSpec spec_;
  ParameterStore<T> store_;
};

// Coverage of one discriminator output cell along one spatial axis:
// cell i sees input samples [start + i*jump, start + i*jump + rf - 1].
struct PatchCoverage {
  int start = 0;
  int jump = 1;
  int rf = 1;
};

inline PatchCoverage discriminator_coverage(const DiscriminatorSpec& spec, int input_extent) {
  PatchCoverage c;
  int extent = input_extent;
  for (int layer = 0; layer < 2 * spec.blocks; ++layer) {
    const int k = 3, s = 2;
    int out = (extent + s - 1) / s;
    int pad_total = std::max(0, (out - 1) * s + k - extent);
    int pad_top = pad_total / 2;
    c.start -= pad_top * c.jump;
    c.rf += (k - 1) * c.jump;
    c.jump *= s;
    extent = out;
  }
  return c;  // final 1x1 layer does not change the geometry
}

// PatchGAN discriminator: `blocks` blocks of two stride-2 3x3 convolutions
// with batchnorm and leaky ReLU (batchnorm omitted on the very first layer),
// channel width doubling per block, then a linear 1x1 convolution to a
// single-channel patch score map. No sigmoid: the LS-GAN loss consumes raw
// scores.
template <class T>
class Discriminator {
 public:
  Discriminator(DiscriminatorSpec spec, uint64_t seed) : spec_(spec) {
    spec_.validate();
    Rng rng(mix_seed(seed, 0x64697363ull));
    int prev = 1;
    for (int b = 0; b < spec_.blocks; ++b) {
      int width = spec_.base_filters << b;
      std::string p = "blk" + std::to_string(b);
      bool first = b == 0;
      detail::add_conv(store_, rng, p + ".c0", width, prev, 3, first, !first);
      detail::add_conv(store_, rng, p + ".c1", width, width, 3, false, true);
      prev = width;
    }
    detail::add_conv(store_, rng, "out", 1, prev, 1, true, false);
    store_.spec_desc = spec_.describe();
    store_.seed = seed;
  }

  Discriminator(DiscriminatorSpec spec, ParameterStore<T> store) : spec_(spec), store_(std::move(store)) {
    spec_.validate();
    if (store_.spec_desc != spec_.describe())
      throw std::invalid_argument("discriminator: checkpoint spec '" + store_.spec_desc + "' does not match '" +
                                  spec_.describe() + "'");
  }

  Tensor<T> forward(const Tensor<T>& x, BnMode mode) {
    if (x.rank() != 4 || x.dim(1) != 1)
      throw std::invalid_argument("discriminator: expected input [N,1,H,W], got " + shape_str(x.shape()));
    const int min_extent = 1 << spec_.blocks;
    if (x.dim(2) < min_extent || x.dim(3) < min_extent)
      throw std::invalid_argument("discriminator: input " + shape_str(x.shape()) + " too small, needs at least " +
                                  std::to_string(min_extent) + " per axis");
    const T slope = T(spec_.leaky_slope);
    Tensor<T> h = x;
    for (int b = 0; b < spec_.blocks; ++b) {
      std::string p = "blk" + std::to_string(b);
      if (b == 0) {
        h = bias_add(conv2d(h, store_.param(p + ".c0.w"), 2, Padding::Same), store_.param(p + ".c0.b"));
      } else {
        h = conv2d(h, store_.param(p + ".c0.w"), 2, Padding::Same);
        h = bn(h, p + ".c0", mode);
      }
      h = leaky_relu(h, slope);
      h = conv2d(h, store_.param(p + ".c1.w"), 2, Padding::Same);
      h = bn(h, p + ".c1", mode);
      h = leaky_relu(h, slope);
    }
    return bias_add(conv2d(h, store_.param("out.w"), 1, Padding::Same), store_.param("out.b"));
  }

  const DiscriminatorSpec& spec() const { return spec_; }
  ParameterStore<T>& store() { return store_; }
  const ParameterStore<T>& store() const { return store_; }

 private:
  Tensor<T> bn(Tensor<T> h, const std::string& p, BnMode mode) {
    return batchnorm2d(h, store_.param(p + ".bn.g"), store_.param(p + ".bn.b"), store_.buffer(p + ".bn.rm"),
                       store_.buffer(p + ".bn.rv"), mode);
  }

  DiscriminatorSpec spec_;
  ParameterStore<T> store_;
};

// Mean structural similarity over an 11x11 Gaussian window (sigma 1.5,
// k1=0.01, k2=0.03), computed on the valid region. Differentiable; range
// (-1, 1], and exactly 1 for identical images.
template <class T>
Tensor<T> ssim(const Tensor<T>& a, const Tensor<T>& b, T data_range, int window = 11) {
  check_same_shape("ssim", a, b);
  if (a.rank() != 4 || a.dim(1) != 1) throw std::invalid_argument("ssim: expected [N,1,H,W] images");
  if (!(data_range > 0)) throw std::invalid_argument("ssim: data_range must be positive");
  if (window < 1 || window % 2 == 0 || window > a.dim(2) || window > a.dim(3))
    throw std::invalid_argument("ssim: window must be odd and fit inside the image");

  const T sigma = T(1.5);
  std::vector<T> k(size_t(window) * window);
  T s = 0;
  for (int y = 0; y < window; ++y)
    for (int x = 0; x < window; ++x) {
      T dy = T(y - window / 2), dx = T(x - window / 2);
      T v = std::exp(-(dy * dy + dx * dx) / (2 * sigma * sigma));
      k[size_t(y) * window + x] = v;
      s += v;
    }
  for (auto& v : k) v /= s;
  auto win = Tensor<T>::from_data({1, 1, window, window}, std::move(k));

  const T c1 = (T(0.01) * data_range) * (T(0.01) * data_range);
  const T c2 = (T(0.03) * data_range) * (T(0.03) * data_range);

  auto mu_a = conv2d(a, win, 1, Padding::Valid);
  auto mu_b = conv2d(b, win, 1, Padding::Valid);
  auto var_a = sub(conv2d(mul(a, a), win, 1, Padding::Valid), square(mu_a));
  auto var_b = sub(conv2d(mul(b, b), win, 1, Padding::Valid), square(mu_b));
  auto cov = sub(conv2d(mul(a, b), win, 1, Padding::Valid), mul(mu_a, mu_b));

  auto num = mul(add_const(scale(mul(mu_a, mu_b), T(2)), c1), add_const(scale(cov, T(2)), c2));
  auto den = mul(add_const(add(square(mu_a), square(mu_b)), c1), add_const(add(var_a, var_b), c2));
  return mean(div(num, den));
}

}  // namespace otus
