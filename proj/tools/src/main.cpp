#include <iostream>

#include "tta_cli/commands.hpp"

int main(int argc, char** argv) { return tta::cli::run_cli(argc, argv, std::cout, std::cerr); }
