#include "interopt/cli.hpp"

int main(int argc, char** argv) { return interopt::run_cli(argc, argv); }
