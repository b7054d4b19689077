#include "cimd/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return cimd::run_cli(argc, argv, std::cout, std::cerr); }
