#include "cli.hpp"

int main(int argc, char** argv) { return sgte::cli::run(argc, argv); }
