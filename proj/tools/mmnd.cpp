#include "mmnd/cli.hpp"

int main(int argc, char** argv) { return mmnd::cli::run(argc, argv); }
