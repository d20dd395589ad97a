#include "forgetlab/cli.hpp"

int main(int argc, char** argv) { return forgetlab::run_cli(argc, argv); }
