#include "cli.hpp"

int main(int argc, char** argv) { return esc::cli::run({argv + 1, argv + argc}); }
