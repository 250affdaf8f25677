#include "evgen/cli.hpp"

int main(int argc, char** argv) { return evgen::cli::run(argc, argv); }
