#include <iostream>

#include "tes/cli.hpp"

int main(int argc, char** argv) {
  return tes::run_cli(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
