#include <iostream>
#include <string>
#include <vector>

#include "bfdn/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return bfdn::run_cli(args, std::cout, std::cerr);
}
