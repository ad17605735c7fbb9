#include "fedkd/cli.hpp"

int main(int argc, char** argv) {
    return fedkd::cli::run(argc, argv);
}
