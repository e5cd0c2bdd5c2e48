#include "otus/common.hpp"

#include <algorithm>
#include <cstdlib>
#include <thread>
#include <vector>

namespace otus {

int worker_threads() {
  if (const char* env = std::getenv("OTUS_THREADS")) {
    int n = std::atoi(env);
    if (n >= 1) return n;
  }
  unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : int(hc);
}

void parallel_for(size_t n, const std::function<void(size_t, size_t)>& body) {
  if (n == 0) return;
  size_t nt = std::min<size_t>(worker_threads(), n);
  if (nt <= 1) {
    body(0, n);
    return;
  }
  std::vector<std::thread> workers;
  workers.reserve(nt);
  size_t chunk = (n + nt - 1) / nt;
  for (size_t t = 0; t < nt; ++t) {
    size_t b = t * chunk;
    size_t e = std::min(n, b + chunk);
    if (b >= e) break;
    workers.emplace_back([&body, b, e] { body(b, e); });
  }
  for (auto& w : workers) w.join();
}

}  // namespace otus
