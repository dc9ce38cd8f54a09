#include <iostream>
#include <string>
#include <vector>

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "cli.hpp"

int main(int argc, char** argv) {
  // Progress goes to stderr so stdout stays machine-readable.
  spdlog::set_default_logger(spdlog::stderr_color_mt("ctcnat"));
  std::vector<std::string> args(argv + 1, argv + argc);
  return ctcnat::cli::run(args, std::cout, std::cerr);
}
