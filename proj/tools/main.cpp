#include <iostream>

#include "racebench/cli.hpp"

int main(int argc, char** argv) { return racebench::run_cli(argc, argv, std::cout, std::cerr); }
