#include "commands.hpp"

int main(int argc, char** argv) { return rxtree::cli::run(argc, argv); }
