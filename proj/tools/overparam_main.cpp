#include "overparam/cli.hpp"

int main(int argc, char** argv) { return overparam::cli::run(argc, argv); }
