#include <iostream>

#include "optalloc/cli/app.hpp"

int main(int argc, char** argv) { return optalloc::cli::run(argc, argv, std::cout, std::cerr); }
