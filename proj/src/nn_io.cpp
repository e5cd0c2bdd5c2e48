#include "otus/nn_io.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "otus/serialize.hpp"

namespace fs = std::filesystem;

namespace otus {

void save_checkpoint(const std::string& dir, const ParameterStore<float>& store) {
  fs::create_directories(dir);
  std::ostringstream manifest;
  manifest << "OTUS-CKPT v1\n";
  manifest << "spec " << store.spec_desc << '\n';
  manifest << "spec_hash " << std::hex << store.spec_hash() << std::dec << '\n';
  manifest << "seed " << store.seed << '\n';
  manifest << "epoch " << store.epoch << '\n';
  int idx = 0;
  auto dump = [&](const char* kind, const std::string& path, const Tensor<float>& t) {
    char name[32];
    std::snprintf(name, sizeof(name), "%04d.tnsr", idx++);
    save_tnsr((fs::path(dir) / name).string(), t);
    manifest << kind << ' ' << path << ' ' << name << '\n';
  };
  for (const auto& [path, t] : store.params) dump("param", path, t);
  for (const auto& [path, t] : store.buffers) dump("buffer", path, t);
  std::ofstream f(fs::path(dir) / "manifest.txt");
  if (!f) throw std::runtime_error("save_checkpoint: cannot write manifest in " + dir);
  f << manifest.str();
}

ParameterStore<float> load_checkpoint(const std::string& dir, const std::string& expected_spec_desc) {
  std::ifstream f(fs::path(dir) / "manifest.txt");
  if (!f) throw std::runtime_error("load_checkpoint: no manifest in " + dir);
  std::string line;
  std::getline(f, line);
  if (line != "OTUS-CKPT v1") throw std::runtime_error("load_checkpoint: bad manifest magic in " + dir);

  ParameterStore<float> store;
  uint64_t stored_hash = 0;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "spec") {
      std::getline(ls, store.spec_desc);
      if (!store.spec_desc.empty() && store.spec_desc.front() == ' ') store.spec_desc.erase(0, 1);
    } else if (key == "spec_hash") {
      ls >> std::hex >> stored_hash >> std::dec;
    } else if (key == "seed") {
      ls >> store.seed;
    } else if (key == "epoch") {
      ls >> store.epoch;
    } else if (key == "param" || key == "buffer") {
      std::string path, file;
      ls >> path >> file;
      auto t = load_tnsr((fs::path(dir) / file).string());
      if (key == "param") {
        t.set_requires_grad(true);
        store.params.emplace(path, std::move(t));
      } else {
        store.buffers.emplace(path, std::move(t));
      }
    } else {
      throw std::runtime_error("load_checkpoint: unknown manifest entry '" + key + "' in " + dir);
    }
  }
  if (store.spec_hash() != stored_hash) throw std::runtime_error("load_checkpoint: corrupt spec hash in " + dir);
  if (!expected_spec_desc.empty() && fnv1a64(expected_spec_desc) != stored_hash)
    throw std::runtime_error("load_checkpoint: checkpoint spec '" + store.spec_desc + "' does not match expected '" +
                             expected_spec_desc + "'");
  return store;
}

}  // namespace otus
