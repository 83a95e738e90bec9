#include "rtnmpc/io.hpp"

#include <nlohmann/json.hpp>

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace rtnmpc {

namespace {

json load_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open file: " + path);
    json doc;
    try {
        in >> doc;
    } catch (const json::parse_error& e) {
        throw ConfigError("failed to parse " + path + ": " + e.what());
    }
    return doc;
}

void require_keys(const json& obj, const std::set<std::string>& required,
                  const std::set<std::string>& optional, const std::string& where) {
    if (!obj.is_object()) throw ConfigError(where + " must be an object");
    for (const auto& key : required)
        if (!obj.contains(key)) throw ConfigError(where + " is missing key '" + key + "'");
    for (const auto& [key, value] : obj.items()) {
        (void)value;
        if (!required.count(key) && !optional.count(key))
            throw ConfigError(where + " has unknown key '" + key + "'");
    }
}

double number_at(const json& obj, const std::string& key, const std::string& where) {
    const json& v = obj.at(key);
    if (!v.is_number()) throw ConfigError(where + "." + key + " must be a number");
    return v.get<double>();
}

DrugRates parse_rates(const json& obj, const std::string& where) {
    require_keys(obj, {"k12", "k13", "k10", "k21", "k31", "k1e", "ke0"}, {"v1"}, where);
    DrugRates r;
    r.k12 = number_at(obj, "k12", where);
    r.k13 = number_at(obj, "k13", where);
    r.k10 = number_at(obj, "k10", where);
    r.k21 = number_at(obj, "k21", where);
    r.k31 = number_at(obj, "k31", where);
    r.k1e = number_at(obj, "k1e", where);
    r.ke0 = number_at(obj, "ke0", where);
    if (obj.contains("v1")) r.v1 = number_at(obj, "v1", where);
    return r;
}

}  // namespace

PatientConfig parse_patient(const json& doc) {
    require_keys(doc, {"weight_kg", "pk", "pd"}, {}, "patient");
    PatientConfig patient;
    patient.weight_kg = number_at(doc, "weight_kg", "patient");
    require_keys(doc.at("pk"), {"p", "r"}, {}, "patient.pk");
    patient.pk.propofol = parse_rates(doc.at("pk").at("p"), "patient.pk.p");
    patient.pk.remifentanil = parse_rates(doc.at("pk").at("r"), "patient.pk.r");
    const json& pd = doc.at("pd");
    require_keys(pd, {"c50p", "c50r", "e0", "emax", "eta", "beta"}, {}, "patient.pd");
    patient.pd.c50p = number_at(pd, "c50p", "patient.pd");
    patient.pd.c50r = number_at(pd, "c50r", "patient.pd");
    patient.pd.e0 = number_at(pd, "e0", "patient.pd");
    patient.pd.emax = number_at(pd, "emax", "patient.pd");
    patient.pd.eta = number_at(pd, "eta", "patient.pd");
    patient.pd.beta = number_at(pd, "beta", "patient.pd");
    patient.pd.validate();
    build_pk_matrices(patient.pk);  // surfaces invalid rates early
    return patient;
}

PatientConfig load_patient(const std::string& path) { return parse_patient(load_json(path)); }

Scenario parse_scenario(const json& doc) {
    require_keys(doc,
                 {"duration_min", "controller", "cost_weights"},
                 {"ts_min", "horizon", "bis_ref", "initial_inputs", "disturbances",
                  "plant_perturbation", "estimator", "bounds", "seed"},
                 "scenario");
    Scenario s;
    s.duration_min = number_at(doc, "duration_min", "scenario");
    if (doc.contains("ts_min")) s.ts_min = number_at(doc, "ts_min", "scenario");
    if (doc.contains("horizon")) s.horizon = doc.at("horizon").get<int>();
    if (doc.contains("bis_ref")) s.bis_ref = number_at(doc, "bis_ref", "scenario");
    if (doc.contains("seed")) s.seed = doc.at("seed").get<unsigned>();

    const json& ctrl = doc.at("controller");
    require_keys(ctrl, {"gamma", "mode"}, {"terminal_policy"}, "scenario.controller");
    s.controller.gamma = number_at(ctrl, "gamma", "scenario.controller");
    const json& mode = ctrl.at("mode");
    require_keys(mode, {"type"}, {"count", "epsilon", "sigma", "max_iterations"},
                 "scenario.controller.mode");
    const std::string type = mode.at("type").get<std::string>();
    if (type == "fixed_iterations") {
        FixedIterations fixed;
        fixed.count = mode.at("count").get<int>();
        s.controller.mode = fixed;
    } else if (type == "stopping_criterion") {
        StoppingCriterion sc;
        sc.epsilon = number_at(mode, "epsilon", "scenario.controller.mode");
        sc.sigma = number_at(mode, "sigma", "scenario.controller.mode");
        sc.max_iterations = mode.at("max_iterations").get<int>();
        s.controller.mode = sc;
    } else {
        throw ConfigError("unknown controller mode '" + type + "'");
    }
    if (ctrl.contains("terminal_policy")) {
        const std::string policy = ctrl.at("terminal_policy").get<std::string>();
        if (policy == "hold_last")
            s.controller.terminal_policy = hold_last_policy();
        else if (policy == "zero")
            s.controller.terminal_policy = zero_policy();
        else
            throw ConfigError("unknown terminal policy '" + policy + "'");
    }

    const json& weights = doc.at("cost_weights");
    require_keys(weights, {"R", "rho"}, {}, "scenario.cost_weights");
    const json& r_mat = weights.at("R");
    if (!r_mat.is_array() || r_mat.size() != 2 || !r_mat[0].is_array() || r_mat[0].size() != 2)
        throw ConfigError("scenario.cost_weights.R must be a 2x2 array");
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) s.R(i, j) = r_mat[i][j].get<double>();
    s.rho = number_at(weights, "rho", "scenario.cost_weights");

    if (doc.contains("initial_inputs")) {
        const json& init = doc.at("initial_inputs");
        require_keys(init, {"u_p", "u_r"}, {}, "scenario.initial_inputs");
        s.initial_inputs[0] = number_at(init, "u_p", "scenario.initial_inputs");
        s.initial_inputs[1] = number_at(init, "u_r", "scenario.initial_inputs");
    }
    if (doc.contains("disturbances")) {
        for (const json& d : doc.at("disturbances")) {
            require_keys(d, {"start_min", "duration_min", "bis_offset"}, {},
                         "scenario.disturbances[]");
            DisturbanceEvent event;
            event.start_min = number_at(d, "start_min", "disturbance");
            event.duration_min = number_at(d, "duration_min", "disturbance");
            event.bis_offset = number_at(d, "bis_offset", "disturbance");
            s.disturbances.push_back(event);
        }
    }
    if (doc.contains("plant_perturbation")) {
        const json& p = doc.at("plant_perturbation");
        require_keys(p, {}, {"c50p_scale", "c50r_scale", "pk_scale"},
                     "scenario.plant_perturbation");
        if (p.contains("c50p_scale"))
            s.perturbation.c50p_scale = number_at(p, "c50p_scale", "plant_perturbation");
        if (p.contains("c50r_scale"))
            s.perturbation.c50r_scale = number_at(p, "c50r_scale", "plant_perturbation");
        if (p.contains("pk_scale"))
            s.perturbation.pk_scale = number_at(p, "pk_scale", "plant_perturbation");
    }
    if (doc.contains("estimator")) {
        const json& e = doc.at("estimator");
        require_keys(e, {"type"}, {"measurement_noise_std", "process_noise"},
                     "scenario.estimator");
        const std::string etype = e.at("type").get<std::string>();
        if (etype == "full_state") {
            s.estimator = FullStateEstimator{};
        } else if (etype == "filtered") {
            FilteredEstimator filtered;
            if (e.contains("measurement_noise_std"))
                filtered.measurement_noise_std =
                    number_at(e, "measurement_noise_std", "estimator");
            if (e.contains("process_noise"))
                filtered.process_noise = number_at(e, "process_noise", "estimator");
            s.estimator = filtered;
        } else {
            throw ConfigError("unknown estimator type '" + etype + "'");
        }
    }
    if (doc.contains("bounds")) {
        const json& b = doc.at("bounds");
        require_keys(b, {},
                     {"induction_minutes", "induction_up_per_kg", "induction_ur_per_kg",
                      "maintenance_up_per_kg", "maintenance_ur_per_kg"},
                     "scenario.bounds");
        if (b.contains("induction_minutes"))
            s.bounds.induction_minutes = number_at(b, "induction_minutes", "bounds");
        if (b.contains("induction_up_per_kg"))
            s.bounds.induction_up_per_kg = number_at(b, "induction_up_per_kg", "bounds");
        if (b.contains("induction_ur_per_kg"))
            s.bounds.induction_ur_per_kg = number_at(b, "induction_ur_per_kg", "bounds");
        if (b.contains("maintenance_up_per_kg"))
            s.bounds.maintenance_up_per_kg = number_at(b, "maintenance_up_per_kg", "bounds");
        if (b.contains("maintenance_ur_per_kg"))
            s.bounds.maintenance_ur_per_kg = number_at(b, "maintenance_ur_per_kg", "bounds");
    }
    s.validate();
    return s;
}

Scenario load_scenario(const std::string& path) { return parse_scenario(load_json(path)); }

json scenario_to_json(const Scenario& s) {
    json mode;
    if (const auto* fixed = std::get_if<FixedIterations>(&s.controller.mode)) {
        mode = {{"type", "fixed_iterations"}, {"count", fixed->count}};
    } else {
        const auto& sc = std::get<StoppingCriterion>(s.controller.mode);
        mode = {{"type", "stopping_criterion"},
                {"epsilon", sc.epsilon},
                {"sigma", sc.sigma},
                {"max_iterations", sc.max_iterations}};
    }
    json disturbances = json::array();
    for (const auto& d : s.disturbances)
        disturbances.push_back({{"start_min", d.start_min},
                                {"duration_min", d.duration_min},
                                {"bis_offset", d.bis_offset}});
    json estimator;
    if (std::holds_alternative<FullStateEstimator>(s.estimator)) {
        estimator = {{"type", "full_state"}};
    } else {
        const auto& f = std::get<FilteredEstimator>(s.estimator);
        estimator = {{"type", "filtered"},
                     {"measurement_noise_std", f.measurement_noise_std},
                     {"process_noise", f.process_noise}};
    }
    return {
        {"duration_min", s.duration_min},
        {"ts_min", s.ts_min},
        {"horizon", s.horizon},
        {"bis_ref", s.bis_ref},
        {"seed", s.seed},
        {"controller", {{"gamma", s.controller.gamma}, {"mode", mode}}},
        {"cost_weights",
         {{"R", {{s.R(0, 0), s.R(0, 1)}, {s.R(1, 0), s.R(1, 1)}}}, {"rho", s.rho}}},
        {"initial_inputs", {{"u_p", s.initial_inputs[0]}, {"u_r", s.initial_inputs[1]}}},
        {"disturbances", disturbances},
        {"plant_perturbation",
         {{"c50p_scale", s.perturbation.c50p_scale},
          {"c50r_scale", s.perturbation.c50r_scale},
          {"pk_scale", s.perturbation.pk_scale}}},
        {"estimator", estimator},
        {"bounds",
         {{"induction_minutes", s.bounds.induction_minutes},
          {"induction_up_per_kg", s.bounds.induction_up_per_kg},
          {"induction_ur_per_kg", s.bounds.induction_ur_per_kg},
          {"maintenance_up_per_kg", s.bounds.maintenance_up_per_kg},
          {"maintenance_ur_per_kg", s.bounds.maintenance_ur_per_kg}}},
    };
}

void apply_overrides(json& doc, const std::vector<std::string>& overrides) {
    for (const std::string& entry : overrides) {
        const auto eq = entry.find('=');
        if (eq == std::string::npos)
            throw ConfigError("override must have the form key=value: " + entry);
        const std::string path = entry.substr(0, eq);
        const std::string raw = entry.substr(eq + 1);

        json* node = &doc;
        std::stringstream segments(path);
        std::string segment;
        std::vector<std::string> parts;
        while (std::getline(segments, segment, '.')) parts.push_back(segment);
        if (parts.empty()) throw ConfigError("empty override path: " + entry);
        for (size_t i = 0; i + 1 < parts.size(); ++i) {
            if (!node->is_object() || !node->contains(parts[i]))
                throw ConfigError("override path does not exist: " + path);
            node = &(*node)[parts[i]];
        }
        if (!node->is_object() || !node->contains(parts.back()))
            throw ConfigError("override path does not exist: " + path);
        json value;
        try {
            value = json::parse(raw);
        } catch (const json::parse_error&) {
            value = raw;  // treat as a plain string
        }
        (*node)[parts.back()] = value;
    }
}

void write_trace_csv(const SimTrace& trace, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write trace file: " + path);
    static const char* state_names[] = {"c1_p", "c2_p", "c3_p", "ce_p",
                                        "c1_r", "c2_r", "c3_r", "ce_r"};
    out << "time_min";
    for (const char* name : state_names) out << ',' << name;
    for (const char* name : state_names) out << ",est_" << name;
    out << ",u_p,u_r,measured_bis,true_bis,disturbance_offset,"
           "solver_iterations,solver_residual,stage_cost\n";
    char buf[32];
    auto put = [&](double v) {
        std::snprintf(buf, sizeof(buf), "%.12g", v);
        out << ',' << buf;
    };
    for (const auto& row : trace.rows) {
        std::snprintf(buf, sizeof(buf), "%.12g", row.time_min);
        out << buf;
        for (int i = 0; i < kStateDim; ++i) put(row.plant_state[i]);
        for (int i = 0; i < kStateDim; ++i) put(row.estimated_state[i]);
        put(row.applied_input[0]);
        put(row.applied_input[1]);
        put(row.measured_bis);
        put(row.true_bis);
        put(row.disturbance_offset);
        out << ',' << row.solver_iterations;
        put(row.solver_residual);
        put(row.stage_cost);
        out << '\n';
    }
    if (!out) throw std::runtime_error("failed while writing trace file: " + path);
}

json metrics_to_json(const MetricsReport& report) {
    json settling = json::array();
    for (const auto& s : report.disturbance_settling_min)
        settling.push_back(s ? json(*s) : json("not reached"));
    return {
        {"rise_time_min",
         report.rise_time_min ? json(*report.rise_time_min) : json("not reached")},
        {"overshoot_pct", report.overshoot_pct},
        {"time_in_band_pct", report.time_in_band_pct},
        {"disturbance_settling_min", settling},
        {"oscillation_flag", report.oscillation_flag},
    };
}

}  // namespace rtnmpc
