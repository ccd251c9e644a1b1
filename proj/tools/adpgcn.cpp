#include "adpgcn/cli.hpp"

int main(int argc, char** argv) { return adpgcn::cli::run(argc, argv); }
