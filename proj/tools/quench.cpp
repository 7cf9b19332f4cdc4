#include "entmix/cli.hpp"

int main(int argc, char** argv) { return entmix::cli_main(argc, argv); }
