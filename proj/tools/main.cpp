#include "seqvcr/cli.hpp"

int main(int argc, char** argv) { return seqvcr::run_cli(argc, argv); }
