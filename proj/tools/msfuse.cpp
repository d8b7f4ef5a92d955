#include <iostream>
#include <string>
#include <vector>

#include "msfuse/cli/cli.hpp"

int main(int argc, char** argv) {
  const std::vector<std::string> args(argv + 1, argv + argc);
  return msfuse::dispatch(args, std::cout, std::cerr);
}
