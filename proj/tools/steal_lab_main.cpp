#include "steal_lab/cli.hpp"

int main(int argc, char** argv) { return steal_lab::cli_main(argc, argv); }
