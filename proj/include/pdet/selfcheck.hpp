#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace pdet {

// Oracle suites behind `selfcheck` and the acceptance tests: numerical
// gradient checks against the finite-difference oracle, Hungarian vs.
// exhaustive enumeration, and the pseudo-label partition properties.

struct SuiteResult {
    std::string name;
    bool passed = false;
    std::string detail;
};

struct SelfcheckOptions {
    int gradient_points = 100;
    int hungarian_trials = 1000;
    int partition_candidates = 10000;
    int monotonic_pairs = 100;
    double tolerance = 1e-4;
    std::uint64_t seed = 0x9D2C5680;
    bool inject_bug = false;  // negative-control fixture: corrupts one
                              // analytic gradient so the suite must fail
};

SuiteResult check_ddl_gradient(const SelfcheckOptions& opt);
SuiteResult check_detection_gradient(const SelfcheckOptions& opt);
SuiteResult check_ranker_gradient(const SelfcheckOptions& opt);
SuiteResult check_composite_gradient(const SelfcheckOptions& opt);
SuiteResult check_hungarian_oracle(const SelfcheckOptions& opt);
SuiteResult check_ppg_partition(const SelfcheckOptions& opt);

std::vector<SuiteResult> run_selfcheck(const SelfcheckOptions& opt);

}  // namespace pdet
