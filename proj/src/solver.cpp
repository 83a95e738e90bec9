#include "rtnmpc/solver.hpp"

#include <cmath>
#include <limits>
#include <random>
#include <string>

namespace rtnmpc {

TerminalPolicy hold_last_policy() {
    return [](const VectorXd&, const VectorXd& last_input) { return last_input; };
}

TerminalPolicy zero_policy() {
    return [](const VectorXd&, const VectorXd& last_input) {
        return VectorXd::Zero(last_input.size()).eval();
    };
}

void SolverConfig::validate() const {
    if (!(gamma > 0)) throw ConfigError("gamma must be positive");
    if (const auto* fixed = std::get_if<FixedIterations>(&mode)) {
        if (fixed->count < 1) throw ConfigError("iteration count must be >= 1");
    } else {
        const auto& sc = std::get<StoppingCriterion>(mode);
        if (!(sc.epsilon > 0 && sc.epsilon < 1))
            throw ConfigError("epsilon must lie in (0, 1)");
        if (!(sc.sigma > 0)) throw ConfigError("sigma must be positive");
        if (sc.max_iterations < 1) throw ConfigError("max_iterations must be >= 1");
    }
    if (!terminal_policy) throw ConfigError("terminal_policy must be set");
}

InputSequence project(const InputSequence& mu, const std::vector<Box>& boxes) {
    if (boxes.empty() || static_cast<int>(boxes.size()) != mu.rows())
        throw ConfigError("need one box per horizon step");
    InputSequence out(mu.rows(), mu.cols());
    for (Eigen::Index k = 0; k < mu.rows(); ++k) {
        boxes[k].validate();
        out.row(k) = boxes[k].clamp(mu.row(k).transpose()).transpose();
    }
    return out;
}

InputSequence warm_start(const InputSequence& previous, const VectorXd& terminal_state,
                         const TerminalPolicy& policy) {
    if (previous.rows() < 1) throw ShapeError("previous sequence is empty");
    InputSequence shifted(previous.rows(), previous.cols());
    const Eigen::Index n = previous.rows();
    shifted.topRows(n - 1) = previous.bottomRows(n - 1);
    shifted.row(n - 1) = policy(terminal_state, previous.row(n - 1).transpose()).transpose();
    return shifted;
}

std::pair<InputSequence, double> iterate_once(const OcpProblem& problem, const VectorXd& x,
                                              const InputSequence& mu, double gamma) {
    if (!(gamma > 0)) throw ConfigError("gamma must be positive");
    const MatrixXd grad = gradient(problem, x, mu);
    InputSequence next = project(mu - gamma * grad, problem.constraints);
    const double residual = (mu - next).norm();
    return {std::move(next), residual};
}

double stop_threshold(const VectorXd& x, const InputSequence& mu, double epsilon,
                      double sigma, const StageCost& cost) {
    if (!(epsilon > 0 && epsilon < 1)) throw ConfigError("epsilon must lie in (0, 1)");
    if (!(sigma > 0)) throw ConfigError("sigma must be positive");
    const double stage = cost.evaluate(x, mu.row(0).transpose());
    return std::sqrt(1.0 - epsilon * epsilon) / sigma * stage;
}

SolveResult solve_step(const OcpProblem& problem, const VectorXd& x,
                       const InputSequence& previous, const SolverConfig& config,
                       const std::optional<VectorXd>& previous_state) {
    problem.validate();
    config.validate();
    if (!x.allFinite()) throw DivergenceError("measured state is not finite");

    const VectorXd terminal_state =
        rollout(problem, previous_state.value_or(x), previous).back();
    InputSequence mu = project(warm_start(previous, terminal_state, config.terminal_policy),
                               problem.constraints);

    SolveResult result;
    result.criterion_met = true;

    // Divergence watchdog: 10 consecutive cost increases growing past 10x.
    double streak_base = running_cost(problem, x, mu);
    double last_cost = streak_base;
    int increase_streak = 0;
    auto watch = [&](double cost) {
        if (cost > last_cost) {
            if (increase_streak == 0) streak_base = last_cost;
            if (++increase_streak >= 10 && cost > 10.0 * streak_base)
                throw StepSizeError("cost diverging over 10 consecutive iterations; "
                                    "reduce gamma");
        } else {
            increase_streak = 0;
        }
        last_cost = cost;
    };

    double residual = 0.0;
    if (const auto* fixed = std::get_if<FixedIterations>(&config.mode)) {
        for (int i = 0; i < fixed->count; ++i) {
            auto [next, res] = iterate_once(problem, x, mu, config.gamma);
            mu = std::move(next);
            residual = res;
            watch(running_cost(problem, x, mu));
        }
        // Residual of the reported sequence.
        residual = iterate_once(problem, x, mu, config.gamma).second;
        result.iterations_used = fixed->count;
    } else {
        const auto& sc = std::get<StoppingCriterion>(config.mode);
        int i = 0;
        for (;; ++i) {
            auto [next, res] = iterate_once(problem, x, mu, config.gamma);
            residual = res;
            const double threshold =
                stop_threshold(x, mu, sc.epsilon, sc.sigma, problem.cost);
            result.stop_threshold = threshold;
            if (residual < threshold) break;
            if (i >= sc.max_iterations) {
                result.criterion_met = false;
                break;
            }
            mu = std::move(next);
            watch(running_cost(problem, x, mu));
        }
        result.iterations_used = i;
    }

    result.sequence = mu;
    result.applied_input = mu.row(0).transpose();
    result.final_residual = residual;
    result.final_cost = running_cost(problem, x, mu);
    return result;
}

double epsilon_from_constants(double gamma, double m, double L2) {
    if (!(m > 0 && L2 >= m)) throw ConfigError("need 0 < m <= L2");
    if (!(gamma > 0 && gamma < 2.0 / L2))
        throw ConfigError("gamma must lie in (0, 2/L2)");
    const double eps_sq = 1.0 - (2.0 * m * m / L2) * gamma + m * m * gamma * gamma;
    return std::sqrt(std::max(eps_sq, 0.0));
}

InputSequence solve_to_tolerance(const OcpProblem& problem, const VectorXd& x,
                                 const InputSequence& mu0, double gamma, double tol,
                                 int max_iterations) {
    InputSequence mu = project(mu0, problem.constraints);
    for (int i = 0; i < max_iterations; ++i) {
        auto [next, residual] = iterate_once(problem, x, mu, gamma);
        mu = std::move(next);
        if (residual < tol) break;
    }
    return mu;
}

ConstantEstimates estimate_constants(const OcpProblem& problem, const SampleRegion& region,
                                     int sample_count, unsigned seed) {
    problem.validate();
    if (sample_count < 2) throw ConfigError("sample_count must be >= 2");
    if (region.state_lower.size() != problem.system.state_dim ||
        region.state_upper.size() != problem.system.state_dim)
        throw ShapeError("sample region dimension does not match state_dim");

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    auto sample_state = [&] {
        VectorXd x(region.state_lower.size());
        for (Eigen::Index i = 0; i < x.size(); ++i)
            x[i] = region.state_lower[i] +
                   unit(rng) * (region.state_upper[i] - region.state_lower[i]);
        return x;
    };
    auto sample_sequence = [&] {
        InputSequence mu(problem.horizon, problem.system.input_dim);
        for (int k = 0; k < problem.horizon; ++k) {
            const Box& b = problem.constraints[k];
            for (int j = 0; j < problem.system.input_dim; ++j)
                mu(k, j) = b.lower[j] + unit(rng) * (b.upper[j] - b.lower[j]);
        }
        return mu;
    };

    ConstantEstimates est;
    est.strong_convexity = std::numeric_limits<double>::infinity();
    for (int s = 0; s < sample_count; ++s) {
        const VectorXd x = sample_state();
        const InputSequence mu1 = sample_sequence();
        const InputSequence mu2 = sample_sequence();
        const double dist = (mu1 - mu2).norm();
        if (dist < 1e-12) continue;
        const MatrixXd g1 = gradient(problem, x, mu1);
        const MatrixXd g2 = gradient(problem, x, mu2);
        const MatrixXd dg = g1 - g2;
        est.smoothness = std::max(est.smoothness, dg.norm() / dist);
        const double curvature = (dg.array() * (mu1 - mu2).array()).sum() / (dist * dist);
        est.strong_convexity = std::min(est.strong_convexity, curvature);
    }
    est.convex_over_samples = est.strong_convexity > 0;

    // Sensitivity of the reference value function to the first applied input.
    const double ref_gamma = 0.9 / std::max(est.smoothness, 1e-12);
    auto reference_value = [&](const VectorXd& x) {
        const InputSequence mu_ref = solve_to_tolerance(
            problem, x, InputSequence::Zero(problem.horizon, problem.system.input_dim),
            ref_gamma, 1e-11, 200000);
        return std::make_pair(running_cost(problem, x, mu_ref), mu_ref);
    };
    for (int s = 0; s < sample_count; ++s) {
        const VectorXd x = sample_state();
        auto [vx, mu_star] = reference_value(x);
        (void)vx;
        const VectorXd u_star = mu_star.row(0).transpose();
        VectorXd u = sample_sequence().row(0).transpose();
        const double du = (u - u_star).norm();
        if (du < 1e-9) continue;
        const VectorXd xn_sub = problem.system.step(x, u);
        const VectorXd xn_opt = problem.system.step(x, u_star);
        const double v_sub = reference_value(xn_sub).first;
        const double v_opt = reference_value(xn_opt).first;
        est.sigma = std::max(est.sigma, std::abs(v_sub - v_opt) / du);
    }
    return est;
}

}  // namespace rtnmpc
