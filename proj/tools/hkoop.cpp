#include <iostream>

#include "hkoop/cli.hpp"

int main(int argc, char** argv) { return hkoop::run_cli(argc, argv, std::cout, std::cerr); }
