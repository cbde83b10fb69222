#include <iostream>
#include <string>
#include <vector>

#include "sen4x_cli/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return sen4x::cli::run_cli(args, std::cout, std::cerr);
}
