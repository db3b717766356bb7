#include "sfmm/cli.hpp"

int main(int argc, char** argv) { return sfmm::cli_main(argc, argv); }
