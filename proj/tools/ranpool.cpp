#include "ranpool/cli.hpp"

int main(int argc, char** argv) { return ranpool::cli::cli_main(argc, argv); }
