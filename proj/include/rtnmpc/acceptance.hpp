#pragma once

#include <string>
#include <vector>

#include "rtnmpc/io.hpp"

namespace rtnmpc {

struct CriterionResult {
    std::string id;
    std::string description;
    bool pass = false;
    std::string detail;  // measured values
};

// Full acceptance battery: closed-loop clinical criteria on the supplied
// patient plus the synthetic contraction/Lyapunov and model-exactness checks.
std::vector<CriterionResult> run_acceptance_suite(const PatientConfig& patient);

}  // namespace rtnmpc
