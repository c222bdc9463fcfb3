#include <string>
#include <vector>

#include "lrdrop/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return lrdrop::cli::dispatch(args);
}
