#include <iostream>
#include <string>
#include <vector>

#include "uniform_lse/cli.hpp"

int main(int argc, char **argv) {
  std::ios::sync_with_stdio(false);
  const std::vector<std::string> args(argv + 1, argv + argc);
  return uniform_lse::cli::run(args, std::cout, std::cerr);
}
