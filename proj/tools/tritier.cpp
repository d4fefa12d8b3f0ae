#include "tritier/cli.hpp"

int main(int argc, char** argv) { return tritier::cli::run(argc, argv); }
