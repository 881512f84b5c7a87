#include <iostream>

#include "cli.hpp"

int main(int argc, char** argv) { return attnsched::cli::main_cli(argc, argv, std::cout, std::cerr); }
