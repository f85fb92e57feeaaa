#include <iostream>

#include "soar/cli.hpp"

int main(int argc, char** argv) { return soar::cli::run(argc, argv, std::cout, std::cerr); }
