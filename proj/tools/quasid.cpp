#include <iostream>

#include "quasid/cli.hpp"

int main(int argc, char** argv) {
  quasid::cli::tune_allocator();
  return quasid::cli::run(argc, argv, std::cout, std::cerr);
}
