#include "commands.hpp"

int main(int argc, char** argv) { return cgdp::cli::run_cli(argc, argv); }
