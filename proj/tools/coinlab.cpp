#include <iostream>

#include "coinlab/cli.hpp"

int main(int argc, char** argv) {
  return coinlab::cli::run(argc, argv, std::cout, std::cerr);
}
