#include "zerolight/cli.hpp"

int main(int argc, char** argv) { return zerolight::run_cli(argc, argv); }
