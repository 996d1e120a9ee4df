#include "divts/cli.hpp"

int main(int argc, char** argv) { return divts::cli::main_entry(argc, argv); }
