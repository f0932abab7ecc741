#include "traceql/cli.hpp"

#include <iostream>

int main(int argc, char** argv) {
    return traceql::run_cli(argc, argv, {std::cin, std::cout, std::cerr});
}
