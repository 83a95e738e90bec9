#pragma once

#include <nlohmann/json_fwd.hpp>
#include <string>
#include <vector>

#include "rtnmpc/sim.hpp"

namespace rtnmpc {

using json = nlohmann::json;

// Patient description as loaded from disk; the sampling time comes from the
// scenario, so the dynamic matrices are built later.
struct PatientConfig {
    double weight_kg = 70.0;
    PkRates pk;
    PdParams pd;

    PatientModel build(double ts_min) const {
        return PatientModel::build(weight_kg, pk, pd, ts_min);
    }
};

// Strict parsers: unknown or missing keys are ConfigErrors.
PatientConfig parse_patient(const json& doc);
PatientConfig load_patient(const std::string& path);

Scenario parse_scenario(const json& doc);
Scenario load_scenario(const std::string& path);
json scenario_to_json(const Scenario& scenario);

// Apply "dotted.path=value" overrides onto a JSON document; every path
// segment must already exist.
void apply_overrides(json& doc, const std::vector<std::string>& overrides);

void write_trace_csv(const SimTrace& trace, const std::string& path);
json metrics_to_json(const MetricsReport& report);

}  // namespace rtnmpc
