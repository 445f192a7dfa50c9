#include "mecor/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return mecor::cli::run(argc, argv, std::cout, std::cerr); }
