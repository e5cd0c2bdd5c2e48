#include "otus/serialize.hpp"

#include <bit>
#include <cstdio>
#include <fstream>
#include <sstream>

static_assert(std::endian::native == std::endian::little, "TNSR v1 writes little-endian floats");
static_assert(sizeof(float) == 4);

namespace otus {

void save_tnsr(const std::string& path, const Shape& shape, const float* data) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("save_tnsr: cannot open " + path);
  f << "TNSR v1 " << shape.size();
  for (int d : shape) f << ' ' << d;
  f << '\n';
  f.write(reinterpret_cast<const char*>(data), std::streamsize(sizeof(float) * shape_numel(shape)));
  if (!f) throw std::runtime_error("save_tnsr: write failed for " + path);
}

void save_tnsr(const std::string& path, const Tensor<float>& t) { save_tnsr(path, t.shape(), t.data().data()); }

Tensor<float> load_tnsr(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("load_tnsr: cannot open " + path);
  std::string line;
  std::getline(f, line);
  std::istringstream hdr(line);
  std::string magic, version;
  size_t rank = 0;
  hdr >> magic >> version >> rank;
  if (!hdr || magic != "TNSR" || version != "v1") throw std::runtime_error("load_tnsr: bad header in " + path);
  Shape shape(rank);
  for (size_t i = 0; i < rank; ++i) {
    hdr >> shape[i];
    if (!hdr || shape[i] < 0) throw std::runtime_error("load_tnsr: bad shape in " + path);
  }
  std::vector<float> data(shape_numel(shape));
  f.read(reinterpret_cast<char*>(data.data()), std::streamsize(sizeof(float) * data.size()));
  if (f.gcount() != std::streamsize(sizeof(float) * data.size()))
    throw std::runtime_error("load_tnsr: truncated data in " + path);
  return Tensor<float>::from_data(std::move(shape), std::move(data));
}

}  // namespace otus
