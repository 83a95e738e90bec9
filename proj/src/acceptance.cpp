#include "rtnmpc/acceptance.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>

namespace rtnmpc {

namespace {

std::string fmt(double v) {
    std::ostringstream out;
    out.precision(6);
    out << v;
    return out.str();
}

Scenario reference_scenario(double duration_min, int iterations = 50) {
    Scenario s;
    s.duration_min = duration_min;
    s.ts_min = 0.1;
    s.horizon = 25;
    s.controller.gamma = 1e-3;
    s.controller.mode = FixedIterations{iterations};
    s.bis_ref = 50.0;
    s.R << 1, 0, 0, 1000;
    s.rho = 10.0;
    return s;
}

double terminal_bis_error(const SimTrace& trace, double ref) {
    return std::abs(trace.rows.back().measured_bis - ref);
}

// ---- synthetic benches ------------------------------------------------------

struct QuadraticForm {
    MatrixXd hessian;     // H of h(x, mu) in mu
    MatrixXd cross;       // F: grad_mu h = H mu_vec + F^T x
    MatrixXd state_quad;  // G: grad_x h = G x + F mu_vec
};

// Stacks the LQ running cost h(x, mu) = 1/2 mu'H mu + x'F mu + 1/2 x'G x
// for x+ = Ax + Bu, stage cost 1/2(x'Qx + u'Ru), terminal 1/2 x'P x.
QuadraticForm condensed_lq(const MatrixXd& A, const MatrixXd& B, const MatrixXd& Q,
                           const MatrixXd& R, const MatrixXd& P, int N) {
    const Eigen::Index nx = A.rows(), nu = B.cols();
    MatrixXd Su = MatrixXd::Zero(N * nx, N * nu);  // xi_1..xi_N vs mu_0..mu_{N-1}
    MatrixXd Sx = MatrixXd::Zero(N * nx, nx);
    MatrixXd Apow = MatrixXd::Identity(nx, nx);
    for (int k = 1; k <= N; ++k) {
        Apow = (A * Apow).eval();
        Sx.middleRows((k - 1) * nx, nx) = Apow;
        for (int j = 0; j < k; ++j) {
            MatrixXd blk = B;
            for (int p = 0; p < k - 1 - j; ++p) blk = A * blk;
            Su.block((k - 1) * nx, j * nu, nx, nu) = blk;
        }
    }
    MatrixXd Qbar = MatrixXd::Zero(N * nx, N * nx);
    for (int k = 1; k < N; ++k) Qbar.block((k - 1) * nx, (k - 1) * nx, nx, nx) = Q;
    Qbar.block((N - 1) * nx, (N - 1) * nx, nx, nx) = P;
    MatrixXd Rbar = MatrixXd::Zero(N * nu, N * nu);
    for (int k = 0; k < N; ++k) Rbar.block(k * nu, k * nu, nu, nu) = R;

    QuadraticForm qf;
    qf.hessian = Su.transpose() * Qbar * Su + Rbar;
    qf.cross = Sx.transpose() * Qbar * Su;
    qf.state_quad = Q + Sx.transpose() * Qbar * Sx;
    return qf;
}

OcpProblem linear_quadratic_problem(const MatrixXd& A, const MatrixXd& B, const MatrixXd& Q,
                                    const MatrixXd& R, const MatrixXd& P, int N,
                                    double box_halfwidth) {
    OcpProblem problem;
    problem.system.state_dim = static_cast<int>(A.rows());
    problem.system.input_dim = static_cast<int>(B.cols());
    problem.system.step = [A, B](const VectorXd& x, const VectorXd& u) -> VectorXd {
        return A * x + B * u;
    };
    problem.system.jacobian_x = [A](const VectorXd&, const VectorXd&) { return A; };
    problem.system.jacobian_u = [B](const VectorXd&, const VectorXd&) { return B; };
    problem.cost.evaluate = [Q, R](const VectorXd& x, const VectorXd& u) {
        return 0.5 * x.dot(Q * x) + 0.5 * u.dot(R * u);
    };
    problem.cost.grad_x = [Q](const VectorXd& x, const VectorXd&) -> VectorXd { return Q * x; };
    problem.cost.grad_u = [R](const VectorXd&, const VectorXd& u) -> VectorXd { return R * u; };
    problem.cost.terminal_evaluate = [P](const VectorXd& x) { return 0.5 * x.dot(P * x); };
    problem.cost.terminal_grad = [P](const VectorXd& x) -> VectorXd { return P * x; };
    problem.horizon = N;
    Box box;
    box.lower = VectorXd::Constant(B.cols(), -box_halfwidth);
    box.upper = VectorXd::Constant(B.cols(), box_halfwidth);
    problem.constraints.assign(N, box);
    return problem;
}

VectorXd flatten(const InputSequence& mu) {
    VectorXd v(mu.size());
    for (Eigen::Index k = 0; k < mu.rows(); ++k)
        v.segment(k * mu.cols(), mu.cols()) = mu.row(k).transpose();
    return v;
}

InputSequence unflatten(const VectorXd& v, Eigen::Index rows, Eigen::Index cols) {
    InputSequence mu(rows, cols);
    for (Eigen::Index k = 0; k < rows; ++k)
        mu.row(k) = v.segment(k * cols, cols).transpose();
    return mu;
}

// Box-QP reference optimizer: cyclic coordinate descent with exact clamped
// per-coordinate minimization. Independent of the projected-gradient path.
VectorXd coordinate_descent_qp(const MatrixXd& H, const VectorXd& f, const VectorXd& lower,
                               const VectorXd& upper) {
    VectorXd z = VectorXd::Zero(f.size());
    for (int sweep = 0; sweep < 100000; ++sweep) {
        double max_change = 0.0;
        for (Eigen::Index i = 0; i < z.size(); ++i) {
            const double gi = H.row(i).dot(z) + f[i];
            const double zi = std::clamp(z[i] - gi / H(i, i), lower[i], upper[i]);
            max_change = std::max(max_change, std::abs(zi - z[i]));
            z[i] = zi;
        }
        if (max_change < 1e-14) break;
    }
    return z;
}

MatrixXd solve_dare(const MatrixXd& A, const MatrixXd& B, const MatrixXd& Q,
                    const MatrixXd& R) {
    MatrixXd P = Q;
    for (int i = 0; i < 100000; ++i) {
        const MatrixXd K = (R + B.transpose() * P * B).ldlt().solve(B.transpose() * P * A);
        const MatrixXd next =
            Q + A.transpose() * P * A - A.transpose() * P * B * K;
        if ((next - P).norm() < 1e-14) return next;
        P = next;
    }
    return P;
}

// ---- individual criteria ----------------------------------------------------

CriterionResult check_induction(const PatientConfig& patient, const SimTrace& trace,
                                const Scenario& scenario, double runtime_s) {
    CriterionResult result{"A1", "induction rise time <= 4 min, runtime < 5 s"};
    const MetricsReport metrics = compute_metrics(trace, scenario, patient.pd.e0);
    const bool rise_ok = metrics.rise_time_min && *metrics.rise_time_min <= 4.0;
    result.pass = rise_ok && runtime_s < 5.0;
    result.detail =
        "rise_time=" + (metrics.rise_time_min ? fmt(*metrics.rise_time_min) : "not reached") +
        " min, runtime=" + fmt(runtime_s) + " s";
    return result;
}

CriterionResult check_overshoot(const PatientConfig& patient, const SimTrace& trace,
                                const Scenario& scenario) {
    CriterionResult result{"A2", "induction overshoot <= 15%"};
    const MetricsReport metrics = compute_metrics(trace, scenario, patient.pd.e0);
    result.pass = metrics.overshoot_pct <= 15.0;
    result.detail = "overshoot=" + fmt(metrics.overshoot_pct) + "%";
    return result;
}

CriterionResult check_maintenance(const PatientConfig& patient) {
    CriterionResult result{"A3", "60-min time-in-band >= 85%"};
    const Scenario scenario = reference_scenario(60.0);
    const SimTrace trace = run_scenario(patient.build(scenario.ts_min), scenario);
    const MetricsReport metrics = compute_metrics(trace, scenario, patient.pd.e0);
    result.pass = metrics.time_in_band_pct >= 85.0;
    result.detail = "time_in_band=" + fmt(metrics.time_in_band_pct) + "%";
    return result;
}

CriterionResult check_disturbance(const PatientConfig& patient) {
    CriterionResult result{"A4", "disturbance settling <= 2 min, no oscillation"};
    Scenario scenario = reference_scenario(60.0);
    scenario.disturbances = {{20.0, 1.0, 10.0}, {35.0, 1.0, -10.0}};
    const SimTrace trace = run_scenario(patient.build(scenario.ts_min), scenario);
    const MetricsReport metrics = compute_metrics(trace, scenario, patient.pd.e0);
    bool all_settled = true;
    std::string detail = "settling=[";
    for (size_t i = 0; i < metrics.disturbance_settling_min.size(); ++i) {
        const auto& s = metrics.disturbance_settling_min[i];
        all_settled = all_settled && s && *s <= 2.0;
        detail += (s ? fmt(*s) : "not reached") +
                  (i + 1 < metrics.disturbance_settling_min.size() ? ", " : "");
    }
    detail += "] min, oscillation=" + std::string(metrics.oscillation_flag ? "yes" : "no");
    result.pass = all_settled && !metrics.oscillation_flag;
    result.detail = detail;
    return result;
}

CriterionResult check_iteration_monotonicity(const PatientConfig& patient) {
    CriterionResult result{"A5", "terminal |BIS-50| non-increasing over {10,50,1000}"};
    std::string detail = "terminal_error=[";
    double previous = std::numeric_limits<double>::infinity();
    bool monotone = true;
    const int counts[] = {10, 50, 1000};
    for (int i = 0; i < 3; ++i) {
        const Scenario scenario = reference_scenario(30.0, counts[i]);
        const SimTrace trace = run_scenario(patient.build(scenario.ts_min), scenario);
        const double err = terminal_bis_error(trace, scenario.bis_ref);
        monotone = monotone && err <= previous + 1e-9;
        previous = err;
        detail += fmt(err) + (i < 2 ? ", " : "]");
    }
    result.pass = monotone;
    result.detail = detail;
    return result;
}

CriterionResult check_uncertainty(const PatientConfig& patient) {
    CriterionResult result{"A6", "PD scales {0.7,0.9,1.1,1.3} reach and hold [40,60]"};
    bool all_ok = true;
    std::string detail;
    for (double factor : {0.7, 0.9, 1.1, 1.3}) {
        Scenario scenario = reference_scenario(30.0);
        scenario.perturbation.c50p_scale = factor;
        scenario.perturbation.c50r_scale = factor;
        const SimTrace trace = run_scenario(patient.build(scenario.ts_min), scenario);
        bool reached = false;
        bool held = true;
        for (const auto& row : trace.rows) {
            const bool in_band = row.measured_bis >= 40.0 && row.measured_bis <= 60.0;
            if (row.time_min <= 15.0) {
                reached = reached || in_band;
            } else {
                held = held && in_band;
            }
        }
        const bool ok = reached && held;
        all_ok = all_ok && ok;
        detail += fmt(factor) + (ok ? ":ok " : ":FAIL ");
    }
    result.pass = all_ok;
    result.detail = detail;
    return result;
}

CriterionResult check_contraction() {
    CriterionResult result{"A7", "contraction and residual bounds on the QP bench"};
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    MatrixXd A(3, 3), B(3, 2);
    A << 0.9, 0.1, 0.0, 0.0, 0.8, 0.1, 0.05, 0.0, 0.7;
    B << 1.0, 0.0, 0.0, 1.0, 0.2, 0.1;
    const MatrixXd Q = MatrixXd::Identity(3, 3);
    const MatrixXd R = 0.1 * MatrixXd::Identity(2, 2);
    const int N = 6;
    const OcpProblem problem = linear_quadratic_problem(A, B, Q, R, Q, N, 1.0);
    const QuadraticForm qf = condensed_lq(A, B, Q, R, Q, N);
    Eigen::SelfAdjointEigenSolver<MatrixXd> eig(qf.hessian);
    const double m = eig.eigenvalues().minCoeff();
    const double L2 = eig.eigenvalues().maxCoeff();
    const double gamma = 1.0 / L2;
    const double eps = epsilon_from_constants(gamma, m, L2);

    const VectorXd lower = VectorXd::Constant(N * 2, -1.0);
    const VectorXd upper = VectorXd::Constant(N * 2, 1.0);
    double worst_ratio = 0.0;
    double worst_residual_slack = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        VectorXd x(3);
        for (int i = 0; i < 3; ++i) x[i] = 2.0 * unit(rng);
        const VectorXd f = qf.cross.transpose() * x;
        const VectorXd mu_star_vec = coordinate_descent_qp(qf.hessian, f, lower, upper);
        InputSequence mu(N, 2);
        for (int k = 0; k < N; ++k)
            for (int j = 0; j < 2; ++j) mu(k, j) = unit(rng);
        for (int iter = 0; iter < 25; ++iter) {
            const double dist_before = (flatten(mu) - mu_star_vec).norm();
            auto [next, residual] = iterate_once(problem, x, mu, gamma);
            const double dist_after = (flatten(next) - mu_star_vec).norm();
            if (dist_before > 1e-12) {
                worst_ratio = std::max(worst_ratio, dist_after / dist_before - eps);
                worst_residual_slack = std::max(
                    worst_residual_slack,
                    (1.0 - eps * eps) * dist_before * dist_before - residual * residual);
            }
            mu = std::move(next);
        }
    }
    result.pass = worst_ratio <= 1e-9 && worst_residual_slack <= 1e-9;
    result.detail = "max(ratio - eps)=" + fmt(worst_ratio) +
                    ", max residual-bound violation=" + fmt(worst_residual_slack) +
                    ", eps=" + fmt(eps);
    return result;
}

CriterionResult check_lyapunov() {
    CriterionResult result{"A8", "Lyapunov decrease under the stopping criterion (LQ bench)"};
    MatrixXd A(2, 2), B(2, 1);
    A << 1.0, 0.1, 0.0, 1.0;
    B << 0.005, 0.1;
    const MatrixXd Q = MatrixXd::Identity(2, 2);
    const MatrixXd R = MatrixXd::Identity(1, 1);
    const MatrixXd P = solve_dare(A, B, Q, R);
    const MatrixXd K = (R + B.transpose() * P * B).ldlt().solve(B.transpose() * P * A);
    const int N = 10;
    const double box_halfwidth = 100.0;
    OcpProblem problem = linear_quadratic_problem(A, B, Q, R, P, N, box_halfwidth);
    const QuadraticForm qf = condensed_lq(A, B, Q, R, P, N);
    Eigen::SelfAdjointEigenSolver<MatrixXd> eig(qf.hessian);
    const double m = eig.eigenvalues().minCoeff();
    const double L_smooth = eig.eigenvalues().maxCoeff();
    const double gamma = 1.0 / L_smooth;
    const double eps = epsilon_from_constants(gamma, m, L_smooth);

    // Analytic sigma = L2 L4 (1 + L3) + L1 over the visited region.
    const VectorXd x0 = (VectorXd(2) << 1.0, -0.5).finished();
    const double v0 = 0.5 * x0.dot(P * x0);
    Eigen::SelfAdjointEigenSolver<MatrixXd> eig_p(P);
    const double radius_x = std::sqrt(2.0 * v0 / eig_p.eigenvalues().minCoeff());
    const double L3 = qf.hessian.ldlt().solve(qf.cross.transpose()).norm();
    const double radius_mu = 10.0 * (L3 + 1.0) * radius_x;
    const double L1 = R.norm() * radius_mu;
    const double grad_mu_bound = qf.hessian.norm() * radius_mu + qf.cross.norm() * radius_x;
    const double grad_x_bound = qf.state_quad.norm() * radius_x + qf.cross.norm() * radius_mu;
    const double L2 = std::max(grad_mu_bound, grad_x_bound);
    const double L4 = B.norm();
    const double sigma = L2 * L4 * (1.0 + L3) + L1;

    SolverConfig config;
    config.gamma = gamma;
    config.mode = StoppingCriterion{eps, sigma, 2000000};
    config.terminal_policy = [K](const VectorXd& terminal_state, const VectorXd&) -> VectorXd {
        return -K * terminal_state;
    };

    auto value = [&P](const VectorXd& x) { return 0.5 * x.dot(P * x); };
    VectorXd x = x0;
    InputSequence previous = InputSequence::Zero(N, 1);
    std::optional<VectorXd> previous_state;
    bool decreased = true;
    bool criterion_ok = true;
    bool suboptimality_ok = true;
    int steps = 0;
    for (; steps < 60 && x.norm() > 1e-6; ++steps) {
        const SolveResult sol = solve_step(problem, x, previous, config, previous_state);
        criterion_ok = criterion_ok && sol.criterion_met;
        const VectorXd u_star = -K * x;
        const double stage = problem.cost.evaluate(x, sol.applied_input);
        suboptimality_ok =
            suboptimality_ok && sigma * (sol.applied_input - u_star).norm() < stage;
        const VectorXd next = A * x + B * sol.applied_input;
        decreased = decreased && value(next) < value(x);
        previous = sol.sequence;
        previous_state = x;
        x = next;
    }
    result.pass = decreased && criterion_ok && suboptimality_ok;
    result.detail = "steps=" + std::to_string(steps) + ", V_end=" + fmt(value(x)) +
                    ", sigma=" + fmt(sigma) + ", eps=" + fmt(eps) +
                    (criterion_ok ? "" : ", criterion missed") +
                    (suboptimality_ok ? "" : ", suboptimality bound violated");
    return result;
}

CriterionResult check_gradient_exactness(const PatientConfig& patient) {
    CriterionResult result{"A9", "adjoint gradient matches finite differences (<= 1e-6)"};
    const PatientModel model = patient.build(0.1);
    OcpProblem problem;
    problem.system = patient_system(model);
    problem.horizon = 25;
    problem.cost = make_anesthesia_cost(model, (Eigen::Matrix2d() << 1, 0, 0, 1000).finished(),
                                        10.0, 50.0);
    InputBoundsSchedule schedule;
    for (int k = 0; k < problem.horizon; ++k)
        problem.constraints.push_back(bounds_at(schedule, 0.0, model.weight_kg));

    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        VectorXd x(kStateDim);
        for (int i = 0; i < 4; ++i) x[i] = 6.0 * unit(rng);
        for (int i = 4; i < 8; ++i) x[i] = 30.0 * unit(rng);
        InputSequence mu(problem.horizon, kInputDim);
        for (int k = 0; k < problem.horizon; ++k) {
            const Box& b = problem.constraints[k];
            for (int j = 0; j < kInputDim; ++j)
                mu(k, j) = b.lower[j] + unit(rng) * (b.upper[j] - b.lower[j]);
        }
        const MatrixXd g = gradient(problem, x, mu);
        const MatrixXd g_fd = finite_difference_gradient(problem, x, mu, 1e-5);
        worst = std::max(worst, (g - g_fd).norm() / std::max(1.0, g.norm()));
    }
    result.pass = worst <= 1e-6;
    result.detail = "max relative error=" + fmt(worst);
    return result;
}

CriterionResult check_discretization(const PatientConfig& patient) {
    CriterionResult result{"A10", "ZOH step matches 1e4-substep explicit integration"};
    const PatientModel model = patient.build(0.1);
    VectorXd x(kStateDim);
    x << 5.0, 2.0, 1.0, 3.0, 20.0, 10.0, 5.0, 12.0;
    VectorXd u(kInputDim);
    u << 50.0, 5.0;

    // RK4 micro-steps on dx/dt = Ac x + Bc u.
    const int substeps = 10000;
    const double h = model.ts_min / substeps;
    VectorXd y = x;
    auto deriv = [&](const VectorXd& state) -> VectorXd {
        return model.Ac * state + model.Bc * u;
    };
    for (int i = 0; i < substeps; ++i) {
        const VectorXd k1 = deriv(y);
        const VectorXd k2 = deriv(y + 0.5 * h * k1);
        const VectorXd k3 = deriv(y + 0.5 * h * k2);
        const VectorXd k4 = deriv(y + h * k3);
        y += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    const VectorXd zoh = model.Ad * x + model.Bd * u;
    const double rel = (zoh - y).norm() / y.norm();
    result.pass = rel <= 1e-6;
    result.detail = "relative state error=" + fmt(rel);
    return result;
}

CriterionResult check_model_sanity(const PatientConfig& patient) {
    CriterionResult result{"A11", "BIS anchor points, range and monotonicity"};
    const PdParams& pd = patient.pd;
    const double at_origin = bis(0.0, 0.0, pd);
    const double at_c50p = bis(pd.c50p, 0.0, pd);
    const double at_c50r = bis(0.0, pd.c50r, pd);
    const double half = pd.e0 - 0.5 * pd.emax;
    bool ok = at_origin == pd.e0 && std::abs(at_c50p - half) <= 1e-12 &&
              std::abs(at_c50r - half) <= 1e-12;
    bool grid_ok = true;
    double prev_row_start = pd.e0;
    for (int i = 0; i < 50 && grid_ok; ++i) {
        const double ce_p = 10.0 * i / 49.0;
        double prev = bis(ce_p, 0.0, pd);
        grid_ok = grid_ok && prev <= prev_row_start + 1e-12;
        prev_row_start = prev;
        for (int j = 0; j < 50 && grid_ok; ++j) {
            const double ce_r = 40.0 * j / 49.0;
            const double value = bis(ce_p, ce_r, pd);
            grid_ok = grid_ok && value >= pd.e0 - pd.emax - 1e-12 &&
                      value <= pd.e0 + 1e-12 && value <= prev + 1e-12;
            prev = value;
        }
    }
    result.pass = ok && grid_ok;
    result.detail = "bis(0,0)=" + fmt(at_origin) + ", bis(c50p,0)=" + fmt(at_c50p) +
                    ", bis(0,c50r)=" + fmt(at_c50r) +
                    (grid_ok ? ", grid ok" : ", grid violation");
    return result;
}

}  // namespace

std::vector<CriterionResult> run_acceptance_suite(const PatientConfig& patient) {
    std::vector<CriterionResult> results;

    const Scenario induction = reference_scenario(30.0);
    const auto start = std::chrono::steady_clock::now();
    const SimTrace induction_trace = run_scenario(patient.build(induction.ts_min), induction);
    const double runtime_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    results.push_back(check_induction(patient, induction_trace, induction, runtime_s));
    results.push_back(check_overshoot(patient, induction_trace, induction));
    results.push_back(check_maintenance(patient));
    results.push_back(check_disturbance(patient));
    results.push_back(check_iteration_monotonicity(patient));
    results.push_back(check_uncertainty(patient));
    results.push_back(check_contraction());
    results.push_back(check_lyapunov());
    results.push_back(check_gradient_exactness(patient));
    results.push_back(check_discretization(patient));
    results.push_back(check_model_sanity(patient));
    return results;
}

}  // namespace rtnmpc
