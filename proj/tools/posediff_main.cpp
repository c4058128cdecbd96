#include <iostream>
#include <vector>

#include "posediff/cli.hpp"

int main(int argc, char** argv) {
    const std::vector<std::string> args(argv + 1, argv + argc);
    return posediff::run_cli(args, std::cout, std::cerr);
}
