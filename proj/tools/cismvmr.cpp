#include "cismvmr/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return cismvmr::run_cli(argc, argv, std::cout, std::cerr); }
