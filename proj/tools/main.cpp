#include <iostream>
#include <string>
#include <vector>

#ifdef __GLIBC__
#include <malloc.h>
#endif

#include "hbnn/cli/app.hpp"

int main(int argc, char **argv) {
#ifdef __GLIBC__
  // Training allocates large short-lived buffers every batch; keep them on
  // the heap instead of fresh zeroed mmap pages.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
  std::vector<std::string> args(argv + 1, argv + argc);
  return hbnn::cli::run(args, std::cout, std::cerr);
}
