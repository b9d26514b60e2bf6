#include "mstex/cli.hpp"

int main(int argc, char** argv) { return mstex::cli::run(argc, argv); }
