#include <iostream>

#include "raw/cli.hpp"

int main(int argc, char** argv) { return raw::cli_dispatch(argc, argv, std::cout, std::cerr); }
