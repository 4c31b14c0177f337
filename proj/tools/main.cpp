#include <string>
#include <vector>

#include "poca/cli.hpp"

int main(int argc, char** argv) { return poca::cli::run(std::vector<std::string>(argv, argv + argc)); }
