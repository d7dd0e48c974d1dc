#include <string>
#include <vector>

#include "iql/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return iql::run_cli(args);
}
