#include "qtsad/cli.hpp"

int main(int argc, char** argv) { return qtsad::cli::main(argc, argv); }
