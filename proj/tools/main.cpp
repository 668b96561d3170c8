#include "sire/cli.hpp"

int main(int argc, char** argv) { return sire::run_cli(argc, argv); }
