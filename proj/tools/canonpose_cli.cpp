#include "canonpose/cli.hpp"

int main(int argc, char** argv) { return canonpose::cli::run(argc, argv); }
