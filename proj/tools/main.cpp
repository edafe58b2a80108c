#include <iostream>
#include <string>
#include <vector>

#include "elnkit/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return elnkit::cli::run(args, std::cout, std::cerr);
}
