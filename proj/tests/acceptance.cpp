// SPDX-License-Identifier: Apache-2.0
//
// Acceptance gate. Runs one criterion (--ac N) or a suite (--suite name,
// default all) and prints one PASS/FAIL line per check. Nonzero exit on any
// failure, so ctest can register each criterion individually.
#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include "moediff/checks.hpp"

int main(int argc, char** argv) {
  int single = 0;
  std::string suite = "all";
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--ac" && i + 1 < argc) {
      single = std::atoi(argv[++i]);
    } else if (arg == "--suite" && i + 1 < argc) {
      suite = argv[++i];
    } else {
      std::cerr << "usage: acceptance [--ac N | --suite grad|oracle|stats|all]\n";
      return 2;
    }
  }

  std::vector<int> ids;
  try {
    ids = single > 0 ? std::vector<int>{single} : moediff::check::suite_ids(suite);
  } catch (const std::exception& e) {
    std::cerr << e.what() << "\n";
    return 2;
  }

  bool ok = true;
  for (int id : ids) {
    const auto r = moediff::check::run(id);
    std::cout << moediff::check::format_result(r) << std::endl;
    ok = ok && r.pass;
  }
  return ok ? 0 : 1;
}
