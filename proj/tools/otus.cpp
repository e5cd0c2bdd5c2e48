#include <cstdio>

int main() {
  std::puts("otus: command-line interface under construction");
  return 0;
}
