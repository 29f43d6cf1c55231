#include <string>
#include <vector>

#include "pdintent/harness.hpp"

int main(int argc, char** argv) {
  return pdintent::run_command(std::vector<std::string>(argv + 1, argv + argc));
}
