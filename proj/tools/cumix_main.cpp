#include <vector>

#include "cumix/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return cumix::cli::run_cli(std::move(args));
}
