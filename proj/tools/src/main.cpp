#include "rdcnet_cli/commands.hpp"

int main(int argc, char** argv) { return rdc::cli::run(argc, argv); }
