#include <iostream>

#include "toposcope/cli.hpp"

int main(int argc, char** argv) { return toposcope::run_cli(argc, argv, std::cout, std::cerr); }
