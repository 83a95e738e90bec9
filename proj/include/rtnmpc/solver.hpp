#pragma once

#include <functional>
#include <optional>
#include <variant>

#include "rtnmpc/ocp.hpp"

namespace rtnmpc {

// Run exactly `count` projected-gradient iterations per sampling instant.
struct FixedIterations {
    int count = 50;
};

// Iterate until the residual drops below sqrt(1-eps^2)/sigma * l(x, mu_0),
// which certifies a value-function decrease, or until max_iterations.
struct StoppingCriterion {
    double epsilon = 0.5;
    double sigma = 1.0;
    int max_iterations = 10000;
};

using SolverMode = std::variant<FixedIterations, StoppingCriterion>;

// Terminal policy kappa appended during warm start; receives the terminal
// state of the previous prediction and the previous last input.
using TerminalPolicy = std::function<VectorXd(const VectorXd& terminal_state,
                                              const VectorXd& last_input)>;

TerminalPolicy hold_last_policy();
TerminalPolicy zero_policy();

struct SolverConfig {
    double gamma = 1e-3;
    SolverMode mode = FixedIterations{};
    TerminalPolicy terminal_policy = hold_last_policy();

    void validate() const;
};

struct SolveResult {
    VectorXd applied_input;        // row 0 of sequence
    InputSequence sequence;
    int iterations_used = 0;
    double final_residual = 0.0;   // ||mu - proj(mu - gamma grad h)|| at the output
    double final_cost = 0.0;       // h(x, mu)
    std::optional<double> stop_threshold;  // StoppingCriterion mode only
    bool criterion_met = true;     // false iff max_iterations hit before the threshold
};

// Euclidean projection onto the product of per-step boxes (component clamp).
InputSequence project(const InputSequence& mu, const std::vector<Box>& boxes);

// Shift the previous sequence one step and append kappa(terminal_state).
InputSequence warm_start(const InputSequence& previous, const VectorXd& terminal_state,
                         const TerminalPolicy& policy);

// One projected-gradient update; returns the new sequence and the fixed-point
// residual evaluated at the input sequence.
std::pair<InputSequence, double> iterate_once(const OcpProblem& problem, const VectorXd& x,
                                              const InputSequence& mu, double gamma);

// sqrt(1-eps^2)/sigma * l(x, mu_0).
double stop_threshold(const VectorXd& x, const InputSequence& mu, double epsilon,
                      double sigma, const StageCost& cost);

// One sampling instant of the real-time scheme: warm start, project into the
// current boxes, iterate per `config.mode`. `previous_state` is the measured
// state the previous sequence was planned from; defaults to x.
SolveResult solve_step(const OcpProblem& problem, const VectorXd& x,
                       const InputSequence& previous, const SolverConfig& config,
                       const std::optional<VectorXd>& previous_state = std::nullopt);

// Contraction factor eps = sqrt(1 - (2 m^2 / L2) gamma + m^2 gamma^2) of a
// projected-gradient step on an m-strongly-convex, L2-smooth objective.
double epsilon_from_constants(double gamma, double m, double L2);

// Iterate to a fixed-point residual below `tol`; reference-solve helper.
InputSequence solve_to_tolerance(const OcpProblem& problem, const VectorXd& x,
                                 const InputSequence& mu0, double gamma, double tol,
                                 int max_iterations);

struct SampleRegion {
    VectorXd state_lower;
    VectorXd state_upper;
};

// Sampling-based estimates. smoothness/sigma are lower bounds on the true
// Lipschitz constants, strong_convexity is an upper bound on the true m.
struct ConstantEstimates {
    double smoothness = 0.0;        // L2 lower bound
    double strong_convexity = 0.0;  // m upper bound; <= 0 flags non-convexity
    double sigma = 0.0;             // sensitivity lower bound
    bool convex_over_samples = true;
};

ConstantEstimates estimate_constants(const OcpProblem& problem, const SampleRegion& region,
                                     int sample_count, unsigned seed = 0);

}  // namespace rtnmpc
