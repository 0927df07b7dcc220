#include <iostream>
#include <string>
#include <vector>

#include "cosrec/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return cosrec::run_cli(args, std::cout, std::cerr);
}
