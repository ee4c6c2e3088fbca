#include <string>
#include <vector>

#include "stids/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return stids::run_cli(args);
}
