#include <string>
#include <vector>

#include "commands.hpp"

int main(int argc, char** argv) {
  return refit::app::run_cli(std::vector<std::string>(argv, argv + argc));
}
