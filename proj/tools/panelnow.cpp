#include "panelnow/cli.hpp"

int main(int argc, char** argv) { return panelnow::cli::main(argc, argv); }
