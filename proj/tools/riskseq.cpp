#include <string>
#include <vector>

#include "riskseq/commands.hpp"

int main(int argc, char** argv) {
  try {
    return riskseq::cli::run_cli(std::vector<std::string>(argv + 1, argv + argc));
  } catch (const std::exception& e) {
    std::cerr << "riskseq: error[E_INTERNAL]: " << e.what() << '\n';
    return 1;
  }
}
