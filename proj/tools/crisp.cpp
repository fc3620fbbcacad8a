#include "crisp/cli.hpp"

int main(int argc, char** argv) { return crisp::cli::main(argc, argv); }
