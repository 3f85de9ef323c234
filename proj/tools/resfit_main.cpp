#include <string>
#include <vector>

#include "resfit/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return resfit::cli_dispatch(args);
}
