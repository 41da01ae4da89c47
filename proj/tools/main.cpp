#include "reqiv/cli.hpp"

int main(int argc, char** argv) { return reqiv::cli::run(argc, argv); }
