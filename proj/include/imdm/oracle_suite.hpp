#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "imdm/kernels.hpp"

// Property suites with brute-force oracles: factorization bound, information
// lemma, partition witness, kernel identities, NELBO limit, gradients,
// zero-init equivalence and joint-unmask scaling.
namespace imdm {

struct OracleCheck {
    std::string name;
    double value = 0.0;
    double limit = 0.0;
    bool upper = true;  // pass iff value <= limit (upper) or value >= limit

    double slack() const { return upper ? limit - value : value - limit; }
    bool passed() const { return slack() >= 0.0; }
};

struct SuiteResult {
    std::string name;
    std::vector<OracleCheck> checks;
    double seconds = 0.0;

    bool passed() const;
    // The check with the smallest slack.
    const OracleCheck& worst() const;
};

using ImdmPosteriorFn = std::function<kernels::ImdmPosterior(int, const Categorical&, double, double)>;

struct OracleOptions {
    std::uint64_t seed = 20240601;
    int workers = 1;
    // The kernel under test; replaced by mutation fixtures.
    ImdmPosteriorFn imdm_posterior = kernels::posterior_imdm;
};

// Suite names in run order.
const std::vector<std::string>& oracle_suite_names();

// Throws std::invalid_argument for an unknown name.
SuiteResult run_oracle_suite(const std::string& name, const OracleOptions& options = {});

}  // namespace imdm
