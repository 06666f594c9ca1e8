#include "cli.hpp"

int main(int argc, char** argv) { return moext::cli::run(argc, argv); }
