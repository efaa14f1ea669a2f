#include <string>
#include <vector>

#include "msda/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return msda::cli::run(args);
}
