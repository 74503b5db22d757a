#include "suppress/cli.hpp"

int main(int argc, char** argv) { return suppress::run_cli(argc, argv); }
