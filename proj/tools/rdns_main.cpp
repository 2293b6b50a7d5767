#include "rdns/cli.hpp"

int main(int argc, char** argv) { return rdns::run_cli(argc, argv); }
