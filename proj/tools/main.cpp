#include "traceopt/cli.hpp"

int main(int argc, char** argv) { return traceopt::cli_main(argc, argv); }
