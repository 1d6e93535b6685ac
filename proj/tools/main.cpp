#include <iostream>

#include "iris/cli.hpp"

int main(int argc, char** argv) { return iris::dispatch({argv + 1, argv + argc}, std::cout, std::cerr); }
