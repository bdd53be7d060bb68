// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

namespace moediff::check {

struct CheckResult {
  int id = 0;
  std::string title;
  bool pass = false;
  double seconds = 0.0;
  std::string detail;  // measured values against their bounds
};

/// Runs acceptance check 1-12. Throws ConfigError for an unknown id.
CheckResult run(int id);

/// grad {4}; oracle {1,2,3,10,11,12}; stats {5,6}; all {1..12}.
std::vector<int> suite_ids(const std::string& suite);
std::vector<CheckResult> run_suite(const std::string& suite);

/// "AC-<id> <title>: PASS (1.2 s) <detail>".
std::string format_result(const CheckResult& r);

}  // namespace moediff::check
