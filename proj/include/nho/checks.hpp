#pragma once

// Property checks runnable from the command line on a fresh build.

#include <functional>
#include <string>
#include <vector>

namespace nho {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct CheckInfo {
  std::string name;
  std::function<CheckResult()> run;
};

const std::vector<CheckInfo>& property_checks();

/// Runs every check whose name contains `filter` (all when empty).
std::vector<CheckResult> run_checks(const std::string& filter);

}  // namespace nho
