#include <iostream>

#include "cliplab/cli/app.hpp"

int main(int argc, char** argv) { return cliplab::cli::run_cli(argc, argv, std::cout, std::cerr); }
