#include <iostream>

#include "lfuse/cli.hpp"

int main(int argc, char** argv) { return lfuse::cli_main(argc, argv, std::cout, std::cerr); }
