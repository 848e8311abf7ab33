#include "voxalign/core/matrix.hpp"

#include <cstdio>

int main() {
  std::puts("voxalign: subcommands land here as modules come online");
  return 0;
}
