#include "hiegat/cli.hpp"

int main(int argc, char** argv) { return hiegat::cli::run(argc, argv); }
