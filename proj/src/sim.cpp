#include "rtnmpc/sim.hpp"

#include <cmath>
#include <iostream>
#include <random>

namespace rtnmpc {

StageCost make_anesthesia_cost(const PatientModel& model, const Eigen::Matrix2d& R,
                               double rho, double bis_ref, double bis_offset) {
    StageCost cost;
    const PdParams pd = model.pd;
    auto tracking_error = [pd, bis_ref, bis_offset](const VectorXd& x) {
        return bis_ref - (bis(x[kEffectSiteP], x[kEffectSiteR], pd) + bis_offset);
    };
    auto tracking_grad = [pd, rho, tracking_error](const VectorXd& x) {
        const double err = tracking_error(x);
        const auto [gp, gr] = bis_gradient(x[kEffectSiteP], x[kEffectSiteR], pd);
        VectorXd g = VectorXd::Zero(kStateDim);
        g[kEffectSiteP] = -rho * err * gp;
        g[kEffectSiteR] = -rho * err * gr;
        return g;
    };
    cost.evaluate = [R, rho, tracking_error](const VectorXd& x, const VectorXd& u) {
        const double err = tracking_error(x);
        return 0.5 * u.dot(R * u) + 0.5 * rho * err * err;
    };
    cost.grad_x = [tracking_grad](const VectorXd& x, const VectorXd&) {
        return tracking_grad(x);
    };
    cost.grad_u = [R](const VectorXd&, const VectorXd& u) -> VectorXd { return R * u; };
    cost.terminal_evaluate = [rho, tracking_error](const VectorXd& x) {
        const double err = tracking_error(x);
        return 0.5 * rho * err * err;
    };
    cost.terminal_grad = tracking_grad;
    return cost;
}

void Scenario::validate() const {
    if (!(ts_min > 0)) throw ConfigError("ts_min must be positive");
    if (horizon < 1) throw ConfigError("horizon must be >= 1");
    if (!(rho > 0)) throw ConfigError("rho must be positive");
    if (!(duration_min >= 0)) throw ConfigError("duration_min must be nonnegative");
    if ((R - R.transpose()).norm() > 1e-12) throw ConfigError("R must be symmetric");
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> eig(R);
    if (eig.eigenvalues().minCoeff() <= 0) throw ConfigError("R must be positive-definite");
    controller.validate();
    bounds.validate();
    for (const auto& d : disturbances)
        if (!(d.start_min >= 0 && d.duration_min >= 0))
            throw ConfigError("disturbance timing must be nonnegative");
}

PatientModel perturbed_patient(const PatientModel& nominal, const PlantPerturbation& p) {
    PkRates pk = nominal.pk;
    for (DrugRates* r : {&pk.propofol, &pk.remifentanil}) {
        r->k12 *= p.pk_scale;
        r->k13 *= p.pk_scale;
        r->k10 *= p.pk_scale;
        r->k21 *= p.pk_scale;
        r->k31 *= p.pk_scale;
        r->k1e *= p.pk_scale;
        r->ke0 *= p.pk_scale;
    }
    PdParams pd = nominal.pd;
    pd.c50p *= p.c50p_scale;
    pd.c50r *= p.c50r_scale;
    return PatientModel::build(nominal.weight_kg, pk, pd, nominal.ts_min);
}

BisKalmanFilter::BisKalmanFilter(const PatientModel& model, double process_noise,
                                 double measurement_noise_std)
    : model_(model),
      x_(VectorXd::Zero(kStateDim)),
      covariance_(1e-2 * MatrixXd::Identity(kStateDim, kStateDim)),
      process_noise_(process_noise),
      measurement_variance_(measurement_noise_std * measurement_noise_std) {}

void BisKalmanFilter::predict(const VectorXd& applied_input) {
    x_ = model_.Ad * x_ + model_.Bd * applied_input;
    covariance_ = model_.Ad * covariance_ * model_.Ad.transpose() +
                  process_noise_ * MatrixXd::Identity(kStateDim, kStateDim);
}

void BisKalmanFilter::update(double measured_bis) {
    if (!measurements_enabled_) return;
    const auto [gp, gr] = model_.bis_output_gradient(x_);
    Eigen::RowVectorXd H = Eigen::RowVectorXd::Zero(kStateDim);
    H[kEffectSiteP] = gp;
    H[kEffectSiteR] = gr;
    const double innovation = measured_bis - model_.bis_output(x_);
    const double s = (H * covariance_ * H.transpose())(0) + measurement_variance_ + 1e-12;
    const VectorXd gain = covariance_ * H.transpose() / s;
    x_ += gain * innovation;
    x_ = x_.cwiseMax(0.0);  // concentrations cannot be negative
    covariance_ = (MatrixXd::Identity(kStateDim, kStateDim) - gain * H) * covariance_;
    if (!covariance_.allFinite() || !x_.allFinite()) {
        std::cerr << "warning: estimator covariance diverged, "
                     "falling back to prediction-only\n";
        measurements_enabled_ = false;
        x_ = x_.unaryExpr([](double v) { return std::isfinite(v) ? v : 0.0; });
        covariance_ = MatrixXd::Identity(kStateDim, kStateDim);
    }
}

VectorXd state_estimator_update(const EstimatorConfig& config, const VectorXd& plant_state,
                                const VectorXd& applied_input, double measured_bis,
                                std::optional<BisKalmanFilter>& filter) {
    if (std::holds_alternative<FullStateEstimator>(config)) return plant_state;
    if (!filter) throw ConfigError("filtered estimator requires an initialized filter");
    filter->predict(applied_input);
    filter->update(measured_bis);
    return filter->estimate();
}

namespace {

double disturbance_at(const std::vector<DisturbanceEvent>& events, double t) {
    double offset = 0.0;
    for (const auto& e : events)
        if (t >= e.start_min && t < e.start_min + e.duration_min) offset += e.bis_offset;
    return offset;
}

bool disturbance_active(const std::vector<DisturbanceEvent>& events, double t) {
    for (const auto& e : events)
        if (t >= e.start_min && t < e.start_min + e.duration_min) return true;
    return false;
}

}  // namespace

SimTrace run_scenario(const PatientModel& patient, const Scenario& scenario,
                      SimTrace* partial_out) {
    scenario.validate();
    SimTrace trace;
    trace.ts_min = scenario.ts_min;
    const int steps = static_cast<int>(std::llround(scenario.duration_min / scenario.ts_min));
    if (steps == 0) return trace;

    const PatientModel nominal =
        PatientModel::build(patient.weight_kg, patient.pk, patient.pd, scenario.ts_min);
    const PatientModel plant = perturbed_patient(nominal, scenario.perturbation);
    const DiscreteSystem controller_system = patient_system(nominal);

    std::mt19937_64 rng(scenario.seed);
    std::normal_distribution<double> noise(0.0, 1.0);
    const auto* filtered = std::get_if<FilteredEstimator>(&scenario.estimator);
    std::optional<BisKalmanFilter> filter;
    if (filtered)
        filter.emplace(nominal, filtered->process_noise, filtered->measurement_noise_std);

    VectorXd x_plant = VectorXd::Zero(kStateDim);
    VectorXd last_input = VectorXd::Zero(kInputDim);
    InputSequence previous(scenario.horizon, kInputDim);
    previous.rowwise() = scenario.initial_inputs.transpose();
    std::optional<VectorXd> previous_estimate;

    auto sense = [&](double t) {
        const double true_bis = plant.bis_output(x_plant);
        const double offset = disturbance_at(scenario.disturbances, t);
        double measured = true_bis + offset;
        if (filtered && filtered->measurement_noise_std > 0)
            measured += filtered->measurement_noise_std * noise(rng);
        return std::make_tuple(true_bis, offset, measured);
    };

    try {
        for (int step = 0; step < steps; ++step) {
            const double t = step * scenario.ts_min;
            const auto [true_bis, offset, measured] = sense(t);
            const VectorXd estimate = state_estimator_update(
                scenario.estimator, x_plant, last_input, measured, filter);
            const double sensed_offset = measured - nominal.bis_output(estimate);

            OcpProblem problem;
            problem.system = controller_system;
            problem.horizon = scenario.horizon;
            problem.cost = make_anesthesia_cost(nominal, scenario.R, scenario.rho,
                                                scenario.bis_ref, sensed_offset);
            problem.constraints.reserve(scenario.horizon);
            for (int k = 0; k < scenario.horizon; ++k)
                problem.constraints.push_back(
                    bounds_at(scenario.bounds, t + k * scenario.ts_min, nominal.weight_kg));

            const SolveResult result =
                solve_step(problem, estimate, previous, scenario.controller, previous_estimate);
            const VectorXd u = problem.constraints.front().clamp(result.applied_input);

            TraceRow row;
            row.time_min = t;
            row.plant_state = x_plant;
            row.estimated_state = estimate;
            row.applied_input = u;
            row.measured_bis = measured;
            row.true_bis = true_bis;
            row.disturbance_offset = offset;
            row.solver_iterations = result.iterations_used;
            row.solver_residual = result.final_residual;
            row.stage_cost = problem.cost.evaluate(estimate, u);
            trace.rows.push_back(std::move(row));

            x_plant = plant.Ad * x_plant + plant.Bd * u;
            previous = result.sequence;
            previous_estimate = estimate;
            last_input = u;
        }
    } catch (const StepSizeError&) {
        if (partial_out) *partial_out = trace;
        throw;
    }

    // Terminal row records the final state; no input is applied at t = end.
    const double t_end = steps * scenario.ts_min;
    const auto [true_bis, offset, measured] = sense(t_end);
    TraceRow row;
    row.time_min = t_end;
    row.plant_state = x_plant;
    row.estimated_state = state_estimator_update(scenario.estimator, x_plant, last_input,
                                                 measured, filter);
    row.applied_input = VectorXd::Zero(kInputDim);
    row.measured_bis = measured;
    row.true_bis = true_bis;
    row.disturbance_offset = offset;
    trace.rows.push_back(std::move(row));
    return trace;
}

MetricsReport compute_metrics(const SimTrace& trace, const Scenario& scenario, double e0) {
    if (trace.rows.empty()) throw ConfigError("cannot compute metrics on an empty trace");
    MetricsReport report;
    const double ref = scenario.bis_ref;
    const double band = 10.0;

    for (const auto& row : trace.rows) {
        if (std::abs(row.measured_bis - ref) <= band) {
            report.rise_time_min = row.time_min - trace.rows.front().time_min;
            break;
        }
    }

    double min_induction_bis = e0;
    for (const auto& row : trace.rows) {
        if (row.time_min < scenario.bounds.induction_minutes)
            min_induction_bis = std::min(min_induction_bis, row.measured_bis);
    }
    if (e0 > ref)
        report.overshoot_pct = std::max(0.0, ref - min_induction_bis) / (e0 - ref) * 100.0;

    int in_band = 0, counted = 0;
    for (const auto& row : trace.rows) {
        if (row.time_min < scenario.bounds.induction_minutes) continue;
        if (disturbance_active(scenario.disturbances, row.time_min)) continue;
        ++counted;
        if (std::abs(row.measured_bis - ref) <= band) ++in_band;
    }
    report.time_in_band_pct = counted > 0 ? 100.0 * in_band / counted : 0.0;

    const double hold_min = 1.0;
    for (const auto& event : scenario.disturbances) {
        const double t_end = event.start_min + event.duration_min;
        std::optional<double> settling;
        for (size_t i = 0; i < trace.rows.size(); ++i) {
            if (trace.rows[i].time_min < t_end) continue;
            if (trace.rows.back().time_min < trace.rows[i].time_min + hold_min)
                break;  // hold window does not fit inside the trace
            bool holds = true;
            for (size_t j = i; j < trace.rows.size(); ++j) {
                if (trace.rows[j].time_min > trace.rows[i].time_min + hold_min) break;
                if (std::abs(trace.rows[j].measured_bis - ref) > band) {
                    holds = false;
                    break;
                }
            }
            if (holds) {
                settling = trace.rows[i].time_min - t_end;
                break;
            }
        }
        report.disturbance_settling_min.push_back(settling);

        // Oscillation check: after settling, count re-entries above 5 points.
        if (settling) {
            const double t_settled = t_end + *settling;
            int excursions = 0;
            bool above = false;
            for (const auto& row : trace.rows) {
                if (row.time_min < t_settled) continue;
                if (disturbance_active(scenario.disturbances, row.time_min)) break;
                const bool now_above = std::abs(row.measured_bis - ref) > 5.0;
                if (now_above && !above) ++excursions;
                above = now_above;
            }
            if (excursions > 1) report.oscillation_flag = true;
        }
    }
    return report;
}

std::vector<std::pair<double, MetricsReport>> uncertainty_sweep(
    const PatientModel& patient, const Scenario& scenario,
    const std::vector<double>& scale_factors) {
    for (double f : scale_factors)
        if (!(f >= 0.5 && f <= 1.5))
            throw ConfigError("uncertainty scale factors must lie in [0.5, 1.5]");
    std::vector<std::pair<double, MetricsReport>> results;
    results.reserve(scale_factors.size());
    for (double f : scale_factors) {
        Scenario perturbed = scenario;
        perturbed.perturbation.c50p_scale = f;
        perturbed.perturbation.c50r_scale = f;
        const SimTrace trace = run_scenario(patient, perturbed);
        results.emplace_back(f, compute_metrics(trace, perturbed, patient.pd.e0));
    }
    return results;
}

}  // namespace rtnmpc
