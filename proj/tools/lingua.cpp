#include <string>
#include <vector>

#include "lingua/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return lingua::cli::run(args);
}
