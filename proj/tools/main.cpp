#include "mtnet/cli.hpp"

int main(int argc, char** argv) { return mtnet::cli::run(argc, argv); }
