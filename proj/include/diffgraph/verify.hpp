#pragma once

#include <string>
#include <vector>

namespace diffgraph {

struct SuiteResult {
  std::string name;
  double max_error = 0.0;
  double tolerance = 0.0;  // 0 means the comparison must be exact
  bool passed = false;
  std::string detail;  // worst-case note for the report
};

// Fixed-seed property suites, one per release criterion that is checkable
// as a property, in criterion order: reduction equivalence, gradient
// correctness, permutation equivariance, attention soundness, metric
// oracles, optimizer and schedule.
std::vector<SuiteResult> run_verification();

}  // namespace diffgraph
