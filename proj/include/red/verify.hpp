#pragma once

#include "red/report.hpp"

namespace red {

struct CheckResult {
  std::string name;
  bool pass = false;
  double worst = 0.0;  // worst observed normalized residual (or ratio) for the check
  double threshold = 0.0;
  std::string detail;
  double seconds = 0.0;
};

struct VerifyOptions {
  std::uint64_t seed = 2026;
  double fdH = 1e-5;
};

// Full invariant suite, one result per acceptance criterion, in order.
std::vector<CheckResult> runVerifySuite(const VerifyOptions& opts = {});

OrderedJson verifySummaryJson(const std::vector<CheckResult>& checks, double totalSeconds);

}  // namespace red
