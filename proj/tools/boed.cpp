#include "boed/cli.hpp"

int main(int argc, char** argv) { return boed::cli::run_cli(argc, argv); }
