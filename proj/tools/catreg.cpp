#include <iostream>

#include "catreg/cli.hpp"

int main(int argc, char** argv) { return catreg::dispatch(argc, argv, std::cout, std::cerr); }
