#include "romforge/cli.hpp"

int main(int argc, char** argv) { return romforge::cli::run(argc, argv); }
