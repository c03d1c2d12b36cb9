#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace fedstab {

struct CheckResult {
    std::string name;
    bool pass = false;
    std::string detail;
};

struct VerifyOptions {
    std::uint64_t seed = 2026;
    int jobs = 1;
    int nonexpansive_instances = 1000;
    int prox_instances = 1000;
    int mlp_prox_instances = 200;
    int prox_drift_instances = 100;
    int tv_thetas = 100;
    std::size_t tv_oracle = 50000;
    int fd_probes = 100;
    int trend_seeds = 10;
};

// The property suites behind the lemma-certified claims: operator
// non-expansiveness, prox contraction/expansion, the heterogeneity gradient
// gap, gradient correctness, the exact algorithm-collapse identities, drift
// caps, schedule conformance, and the gradient-norm convergence trend.
std::vector<CheckResult> run_verification(const VerifyOptions& opts = {});

}  // namespace fedstab
