#include "cli.hpp"

int main(int argc, char** argv) { return projektor::run_cli(argc, argv); }
