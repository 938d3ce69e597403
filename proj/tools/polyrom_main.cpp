#include <string>
#include <vector>

#include "polyrom/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return polyrom::run_cli(args);
}
