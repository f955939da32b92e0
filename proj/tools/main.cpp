#include <iostream>

#include "lidec/cli.hpp"

int main(int argc, char** argv) { return lidec::run_cli(argc, argv, std::cout, std::cerr); }
