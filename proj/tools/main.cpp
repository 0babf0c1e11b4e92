#include "ttmpc/cli.hpp"

int main(int argc, char** argv) { return ttmpc::run_cli(argc, argv); }
