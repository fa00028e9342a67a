#include <cstdio>

#include "minalign/scm.hpp"

int main() {
  std::puts("minalign: CLI not wired up yet");
  return 2;
}
