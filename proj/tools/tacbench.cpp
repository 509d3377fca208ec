#include "tacbench/cli.hpp"

int main(int argc, char** argv) { return tacbench::cli::run(argc, argv); }
