#include <iostream>

#include "matchnet/cli.hpp"

int main(int argc, char** argv) {
    return matchnet::run_cli(argc, argv, std::cout, std::cerr);
}
