#include <iostream>
#include <string>
#include <vector>

#include "sarscout/cli.hpp"

int main(int argc, char** argv) {
  const std::vector<std::string> args(argv + 1, argv + argc);
  return sarscout::run_cli(args, std::cin, std::cout, std::cerr);
}
