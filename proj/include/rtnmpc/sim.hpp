#pragma once

#include <optional>
#include <variant>
#include <vector>

#include "rtnmpc/pkpd.hpp"
#include "rtnmpc/solver.hpp"

namespace rtnmpc {

// Quadratic stage cost of the anesthesia OCP:
//   l(x, u) = 0.5 u^T R u + rho/2 (bis_ref - (BIS(x) + bis_offset))^2
// The offset carries the current sensed output deviation into the predictions;
// the terminal cost reuses the tracking term.
StageCost make_anesthesia_cost(const PatientModel& model, const Eigen::Matrix2d& R,
                               double rho, double bis_ref, double bis_offset = 0.0);

struct DisturbanceEvent {
    double start_min = 0.0;
    double duration_min = 0.0;
    double bis_offset = 0.0;
};

// Plant-side parameter mismatch; the controller keeps nominal values.
struct PlantPerturbation {
    double c50p_scale = 1.0;
    double c50r_scale = 1.0;
    double pk_scale = 1.0;
};

struct FullStateEstimator {};

struct FilteredEstimator {
    double measurement_noise_std = 2.0;  // BIS points; also used to seed noise on y
    double process_noise = 1e-4;
};

using EstimatorConfig = std::variant<FullStateEstimator, FilteredEstimator>;

struct Scenario {
    double duration_min = 30.0;
    double ts_min = 0.1;
    int horizon = 25;
    SolverConfig controller;
    double bis_ref = 50.0;
    Eigen::Matrix2d R = (Eigen::Matrix2d() << 1, 0, 0, 1000).finished();
    double rho = 10.0;
    Eigen::Vector2d initial_inputs = Eigen::Vector2d(1.0, 1.0);
    std::vector<DisturbanceEvent> disturbances;
    PlantPerturbation perturbation;
    EstimatorConfig estimator = FullStateEstimator{};
    InputBoundsSchedule bounds;
    unsigned seed = 0;

    void validate() const;
};

struct TraceRow {
    double time_min = 0.0;
    VectorXd plant_state;      // 8
    VectorXd estimated_state;  // 8
    VectorXd applied_input;    // 2; zero on the terminal row
    double measured_bis = 0.0;
    double true_bis = 0.0;
    double disturbance_offset = 0.0;
    int solver_iterations = 0;
    double solver_residual = 0.0;
    double stage_cost = 0.0;
};

struct SimTrace {
    double ts_min = 0.1;
    std::vector<TraceRow> rows;
};

// Extended Kalman filter on the linear PK prediction with a linearized BIS
// measurement. A non-finite covariance resets the filter to prediction-only.
class BisKalmanFilter {
public:
    BisKalmanFilter(const PatientModel& model, double process_noise,
                    double measurement_noise_std);

    void predict(const VectorXd& applied_input);
    void update(double measured_bis);

    const VectorXd& estimate() const { return x_; }
    bool measurement_updates_enabled() const { return measurements_enabled_; }

private:
    PatientModel model_;
    VectorXd x_;
    MatrixXd covariance_;
    double process_noise_;
    double measurement_variance_;
    bool measurements_enabled_ = true;
};

// One estimator step per the scenario's estimator config. FullState mode
// returns the plant state unchanged; Filtered mode runs predict + update on
// the supplied filter.
VectorXd state_estimator_update(const EstimatorConfig& config, const VectorXd& plant_state,
                                const VectorXd& applied_input, double measured_bis,
                                std::optional<BisKalmanFilter>& filter);

// Closed-loop simulation of the real-time NMPC controller against the
// (possibly perturbed) patient. Throws StepSizeError with no partial trace on
// solver divergence only if `partial_out` is null; otherwise the partial
// trace is stored there before rethrowing.
SimTrace run_scenario(const PatientModel& patient, const Scenario& scenario,
                      SimTrace* partial_out = nullptr);

struct MetricsReport {
    std::optional<double> rise_time_min;  // empty == band never entered
    double overshoot_pct = 0.0;
    double time_in_band_pct = 0.0;
    std::vector<std::optional<double>> disturbance_settling_min;  // per event
    bool oscillation_flag = false;
};

MetricsReport compute_metrics(const SimTrace& trace, const Scenario& scenario,
                              double e0 = 100.0);

std::vector<std::pair<double, MetricsReport>> uncertainty_sweep(
    const PatientModel& patient, const Scenario& scenario,
    const std::vector<double>& scale_factors);

// Patient with the scenario's plant perturbation applied.
PatientModel perturbed_patient(const PatientModel& nominal, const PlantPerturbation& p);

}  // namespace rtnmpc
