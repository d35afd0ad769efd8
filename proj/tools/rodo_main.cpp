#include <vector>

#include "rodo/cli.hpp"

int main(int argc, char** argv) {
  return rodo::run_cli(std::vector<std::string>(argv + 1, argv + argc));
}
