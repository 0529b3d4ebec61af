#include "picdaq/cli.hpp"

int main(int argc, char** argv) { return picdaq::cli::run(argc, argv); }
