#include "pbmr/cli.hpp"

int main(int argc, char** argv) { return pbmr::cli::run(argc, argv); }
