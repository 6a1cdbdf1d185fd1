#include "seam/cli.hpp"

int main(int argc, char** argv) { return seam::run_cli(argc, argv); }
