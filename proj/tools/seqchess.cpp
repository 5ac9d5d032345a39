#include <iostream>

#include "seqchess/cli.h"

int main(int argc, char** argv) {
    return seqchess::run_cli(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}
