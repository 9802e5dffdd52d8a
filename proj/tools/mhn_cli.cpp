#include <iostream>

#include "mhn/cli.hpp"

int main(int argc, char** argv) { return mhn::cli::run(argc, argv, std::cout, std::cerr); }
