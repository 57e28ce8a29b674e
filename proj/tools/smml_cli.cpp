#include "smml/cli.hpp"

int main(int argc, char** argv) { return smml::run_cli(argc, argv); }
