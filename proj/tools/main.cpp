#include "cli.hpp"

int main(int argc, char** argv) { return pkgscope::cli::run(argc, argv); }
