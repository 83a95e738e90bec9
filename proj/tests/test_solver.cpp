#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "rtnmpc/solver.hpp"

using namespace rtnmpc;

namespace {

// Linear system x+ = A x + B u with quadratic cost; the OCP objective in mu
// is then a strongly convex quadratic, which every bound below exploits.
OcpProblem lq_problem(int horizon, double box_half_width) {
    MatrixXd A(2, 2), B(2, 1);
    A << 0.9, 0.2, -0.1, 0.8;
    B << 0.1, 0.3;
    OcpProblem p;
    p.system.state_dim = 2;
    p.system.input_dim = 1;
    p.system.step = [A, B](const VectorXd& x, const VectorXd& u) -> VectorXd {
        return A * x + B * u;
    };
    p.system.jacobian_x = [A](const VectorXd&, const VectorXd&) { return A; };
    p.system.jacobian_u = [B](const VectorXd&, const VectorXd&) { return B; };
    p.cost.evaluate = [](const VectorXd& x, const VectorXd& u) {
        return 0.5 * x.squaredNorm() + 0.5 * u.squaredNorm();
    };
    p.cost.grad_x = [](const VectorXd& x, const VectorXd&) { return x; };
    p.cost.grad_u = [](const VectorXd&, const VectorXd& u) { return u; };
    p.cost.terminal_evaluate = [](const VectorXd& x) { return 0.5 * x.squaredNorm(); };
    p.cost.terminal_grad = [](const VectorXd& x) { return x; };
    p.horizon = horizon;
    Box b;
    b.lower = VectorXd::Constant(1, -box_half_width);
    b.upper = VectorXd::Constant(1, box_half_width);
    p.constraints.assign(horizon, b);
    return p;
}

// Hessian of the condensed LQ objective, built independently of the library's
// adjoint code: H = Su^T Q_bar Su + I with Su the input-to-state map.
MatrixXd lq_hessian(int horizon) {
    MatrixXd A(2, 2), B(2, 1);
    A << 0.9, 0.2, -0.1, 0.8;
    B << 0.1, 0.3;
    MatrixXd Su = MatrixXd::Zero(2 * (horizon + 1), horizon);
    for (int i = 1; i <= horizon; ++i) {
        MatrixXd Apow = MatrixXd::Identity(2, 2);
        for (int j = i - 1; j >= 0; --j) {
            Su.block(2 * i, j, 2, 1) = Apow * B;
            Apow = (A * Apow).eval();
        }
    }
    // Q_bar = identity here (stage and terminal state weights are both I).
    return Su.transpose() * Su + MatrixXd::Identity(horizon, horizon);
}

}  // namespace

TEST_CASE("project clamps componentwise and is idempotent") {
    std::vector<Box> boxes(3);
    for (int k = 0; k < 3; ++k) {
        boxes[k].lower = VectorXd::Constant(2, -1.0 * (k + 1));
        boxes[k].upper = VectorXd::Constant(2, 2.0 * (k + 1));
    }
    InputSequence mu(3, 2);
    mu << -5, 5, 0.5, -0.5, 10, -10;
    const InputSequence projected = project(mu, boxes);
    CHECK(projected(0, 0) == -1.0);
    CHECK(projected(0, 1) == 2.0);
    CHECK(projected(1, 0) == 0.5);
    CHECK(projected(1, 1) == -0.5);
    CHECK(projected(2, 0) == 6.0);
    CHECK(projected(2, 1) == -3.0);
    CHECK((project(projected, boxes) - projected).norm() == 0.0);

    CHECK_THROWS_AS(project(mu, std::vector<Box>(2, boxes[0])), ConfigError);
}

TEST_CASE("project is the nearest feasible point") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> dist(-4.0, 4.0);
    std::vector<Box> boxes(4);
    for (auto& b : boxes) {
        const double lo = dist(rng);
        b.lower = VectorXd::Constant(2, std::min(lo, 0.0));
        b.upper = VectorXd::Constant(2, std::max(lo, 0.0) + 1.0);
    }
    InputSequence mu(4, 2);
    for (int k = 0; k < 4; ++k)
        for (int j = 0; j < 2; ++j) mu(k, j) = dist(rng);
    const InputSequence p = project(mu, boxes);
    const double best = (mu - p).norm();
    for (int trial = 0; trial < 1000; ++trial) {
        InputSequence candidate(4, 2);
        for (int k = 0; k < 4; ++k)
            for (int j = 0; j < 2; ++j) {
                std::uniform_real_distribution<double> in_box(boxes[k].lower[j],
                                                              boxes[k].upper[j]);
                candidate(k, j) = in_box(rng);
            }
        CHECK((mu - candidate).norm() >= best - 1e-12);
    }
}

TEST_CASE("warm_start shifts and appends the terminal policy input") {
    InputSequence previous(3, 2);
    previous << 1, 2, 3, 4, 5, 6;
    VectorXd terminal_state = VectorXd::Constant(2, 9.0);

    const InputSequence held = warm_start(previous, terminal_state, hold_last_policy());
    CHECK(held(0, 0) == 3.0);
    CHECK(held(0, 1) == 4.0);
    CHECK(held(1, 0) == 5.0);
    CHECK(held(1, 1) == 6.0);
    CHECK(held(2, 0) == 5.0);
    CHECK(held(2, 1) == 6.0);

    const InputSequence zeroed = warm_start(previous, terminal_state, zero_policy());
    CHECK(zeroed(2, 0) == 0.0);
    CHECK(zeroed(2, 1) == 0.0);

    // Custom policy sees the terminal state.
    const InputSequence custom = warm_start(
        previous, terminal_state,
        [](const VectorXd& xN, const VectorXd&) { return (0.5 * xN).eval(); });
    CHECK(custom(2, 0) == 4.5);
    CHECK(custom(2, 1) == 4.5);

    CHECK_THROWS_AS(warm_start(InputSequence(0, 2), terminal_state, hold_last_policy()),
                    ShapeError);
}

TEST_CASE("iterate_once contracts toward the optimum at the predicted rate") {
    const int N = 6;
    const OcpProblem p = lq_problem(N, 50.0);
    const MatrixXd H = lq_hessian(N);
    Eigen::SelfAdjointEigenSolver<MatrixXd> eig(H);
    const double m = eig.eigenvalues().minCoeff();
    const double L2 = eig.eigenvalues().maxCoeff();
    const double gamma = 1.0 / L2;
    const double eps = epsilon_from_constants(gamma, m, L2);

    VectorXd x0(2);
    x0 << 3.0, -2.0;
    const InputSequence mu_star = solve_to_tolerance(
        p, x0, InputSequence::Zero(N, 1), gamma, 1e-13, 200000);

    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> dist(-40.0, 40.0);
    for (int trial = 0; trial < 50; ++trial) {
        InputSequence mu(N, 1);
        for (int k = 0; k < N; ++k) mu(k, 0) = dist(rng);
        const double before = (mu - mu_star).norm();
        const auto [next, residual] = iterate_once(p, x0, mu, gamma);
        const double after = (next - mu_star).norm();
        CHECK(after <= eps * before + 1e-9);
        // Fixed-point residual bounds the distance: (1-eps^2)||mu-mu*||^2 <= ||mu-mu+||^2
        CHECK((1.0 - eps * eps) * before * before <= residual * residual + 1e-9);
    }
}

TEST_CASE("stop_threshold reproduces sqrt(1-eps^2)/sigma * l") {
    StageCost cost;
    cost.evaluate = [](const VectorXd&, const VectorXd&) { return 1.0; };
    const VectorXd x = VectorXd::Zero(1);
    const InputSequence mu = InputSequence::Zero(2, 1);
    // eps = 0.6, sigma = 2: sqrt(1 - 0.36)/2 = 0.4
    CHECK(stop_threshold(x, mu, 0.6, 2.0, cost) == doctest::Approx(0.4));
    CHECK_THROWS_AS(stop_threshold(x, mu, 1.5, 2.0, cost), ConfigError);
    CHECK_THROWS_AS(stop_threshold(x, mu, 0.6, 0.0, cost), ConfigError);
}

TEST_CASE("solve_step cost is monotone in the iteration budget") {
    const int N = 8;
    const OcpProblem p = lq_problem(N, 0.4);  // active constraints
    VectorXd x0(2);
    x0 << 4.0, -3.0;
    const InputSequence previous = InputSequence::Constant(N, 1, 0.2);

    double last_cost = std::numeric_limits<double>::infinity();
    for (int count : {1, 10, 100}) {
        SolverConfig config;
        config.gamma = 0.05;
        config.mode = FixedIterations{count};
        const SolveResult result = solve_step(p, x0, previous, config);
        CHECK(result.iterations_used == count);
        CHECK(result.final_cost <= last_cost + 1e-12);
        CHECK(p.constraints.front().contains(result.applied_input, 1e-12));
        last_cost = result.final_cost;
    }
}

TEST_CASE("solve_step at a fixed point keeps the sequence and reports zero residual") {
    const int N = 5;
    const OcpProblem p = lq_problem(N, 50.0);
    const VectorXd x0 = VectorXd::Zero(2);
    // From the origin with zero inputs the problem is already at its optimum;
    // the hold-last warm start appends another zero, preserving it.
    SolverConfig config;
    config.gamma = 0.05;
    config.mode = FixedIterations{10};
    const SolveResult result = solve_step(p, x0, InputSequence::Zero(N, 1), config);
    CHECK(result.final_residual == doctest::Approx(0.0));
    CHECK(result.sequence.norm() == doctest::Approx(0.0));
    CHECK(result.final_cost == doctest::Approx(0.0));
}

TEST_CASE("solve_step stopping criterion certifies and reports the threshold") {
    const int N = 6;
    const OcpProblem p = lq_problem(N, 50.0);
    VectorXd x0(2);
    x0 << 2.0, 1.0;
    SolverConfig config;
    config.gamma = 0.05;
    StoppingCriterion sc;
    sc.epsilon = 0.9;
    sc.sigma = 50.0;
    sc.max_iterations = 100000;
    config.mode = sc;
    const SolveResult result = solve_step(p, x0, InputSequence::Zero(N, 1), config);
    REQUIRE(result.stop_threshold.has_value());
    CHECK(result.criterion_met);
    CHECK(result.final_residual < *result.stop_threshold);

    // An unreachable budget flags criterion_met = false.
    sc.max_iterations = 1;
    sc.sigma = 1e9;
    config.mode = sc;
    const SolveResult capped = solve_step(p, x0, InputSequence::Zero(N, 1), config);
    CHECK(!capped.criterion_met);
    CHECK(capped.iterations_used == 1);
}

TEST_CASE("solve_step throws StepSizeError when gamma is far too large") {
    const int N = 6;
    const OcpProblem p = lq_problem(N, 1e30);
    VectorXd x0(2);
    x0 << 1.0, 1.0;
    SolverConfig config;
    config.gamma = 50.0;  // way past 2/L2 for this problem
    config.mode = FixedIterations{500};
    CHECK_THROWS_AS(solve_step(p, x0, InputSequence::Constant(N, 1, 0.1), config),
                    StepSizeError);
}

TEST_CASE("SolverConfig::validate rejects bad parameters") {
    SolverConfig config;
    config.validate();
    config.gamma = 0.0;
    CHECK_THROWS_AS(config.validate(), ConfigError);
    config.gamma = 1e-3;
    config.mode = FixedIterations{0};
    CHECK_THROWS_AS(config.validate(), ConfigError);
    config.mode = StoppingCriterion{1.2, 1.0, 100};
    CHECK_THROWS_AS(config.validate(), ConfigError);
    config.mode = StoppingCriterion{0.5, -1.0, 100};
    CHECK_THROWS_AS(config.validate(), ConfigError);
    config.mode = FixedIterations{10};
    config.terminal_policy = nullptr;
    CHECK_THROWS_AS(config.validate(), ConfigError);
}

TEST_CASE("epsilon_from_constants matches the closed form and guards its domain") {
    // m = 1, L2 = 4, gamma = 0.25: eps^2 = 1 - 0.5*0.25... compute directly.
    const double m = 1.0, L2 = 4.0, gamma = 0.25;
    const double expected = std::sqrt(1.0 - (2.0 * m * m / L2) * gamma + m * m * gamma * gamma);
    CHECK(epsilon_from_constants(gamma, m, L2) == doctest::Approx(expected));
    // gamma = 1/L2 with m = L2 gives the best rate: eps = 1 - gamma*m... check m=L2 case.
    CHECK(epsilon_from_constants(0.25, 4.0, 4.0) == doctest::Approx(0.0));
    CHECK_THROWS_AS(epsilon_from_constants(0.6, 1.0, 4.0), ConfigError);  // >= 2/L2
    CHECK_THROWS_AS(epsilon_from_constants(0.25, 5.0, 4.0), ConfigError);  // m > L2
    CHECK_THROWS_AS(epsilon_from_constants(-0.1, 1.0, 4.0), ConfigError);
}

TEST_CASE("estimate_constants brackets the quadratic's spectrum") {
    // One-step problem with diagonal input Hessian diag(1, 4): l = 0.5 u^T D u,
    // dynamics do not feed the cost, so the condensed Hessian is exactly D.
    OcpProblem p;
    p.system.state_dim = 1;
    p.system.input_dim = 2;
    p.system.step = [](const VectorXd& x, const VectorXd&) { return x; };
    p.system.jacobian_x = [](const VectorXd&, const VectorXd&) {
        return MatrixXd::Identity(1, 1);
    };
    p.system.jacobian_u = [](const VectorXd&, const VectorXd&) {
        return MatrixXd::Zero(1, 2);
    };
    p.cost.evaluate = [](const VectorXd&, const VectorXd& u) {
        return 0.5 * (u[0] * u[0] + 4.0 * u[1] * u[1]);
    };
    p.cost.grad_x = [](const VectorXd&, const VectorXd&) { return VectorXd::Zero(1); };
    p.cost.grad_u = [](const VectorXd&, const VectorXd& u) {
        VectorXd g(2);
        g << u[0], 4.0 * u[1];
        return g;
    };
    p.cost.terminal_evaluate = [](const VectorXd&) { return 0.0; };
    p.cost.terminal_grad = [](const VectorXd&) { return VectorXd::Zero(1); };
    p.horizon = 1;
    Box b;
    b.lower = VectorXd::Constant(2, -1.0);
    b.upper = VectorXd::Constant(2, 1.0);
    p.constraints.assign(1, b);

    SampleRegion region;
    region.state_lower = VectorXd::Constant(1, -1.0);
    region.state_upper = VectorXd::Constant(1, 1.0);
    const ConstantEstimates est = estimate_constants(p, region, 50, 1);
    CHECK(est.convex_over_samples);
    CHECK(est.smoothness <= 4.0 + 1e-9);       // sampled lower bound on L2
    CHECK(est.smoothness > 2.0);               // and not wildly loose
    CHECK(est.strong_convexity >= 1.0 - 1e-9); // sampled upper bound on m
    CHECK(est.strong_convexity <= 4.0 + 1e-9);
    // Inputs never reach the state here, so the value-function sensitivity
    // to the applied input is exactly zero.
    CHECK(est.sigma == doctest::Approx(0.0));

    CHECK_THROWS_AS(estimate_constants(p, region, 1, 1), ConfigError);
    SampleRegion bad;
    bad.state_lower = VectorXd::Zero(3);
    bad.state_upper = VectorXd::Zero(3);
    CHECK_THROWS_AS(estimate_constants(p, bad, 10, 1), ShapeError);
}
