#include "wordprobe/cli.hpp"

int main(int argc, char** argv) { return wordprobe::run_cli(argc, argv); }
