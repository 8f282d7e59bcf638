#include "sake/cli.hpp"

int main(int argc, char** argv) { return sake::cli::run(std::vector<std::string>(argv + 1, argv + argc)); }
