#pragma once

#include <Eigen/Dense>
#include <functional>
#include <vector>

#include "rtnmpc/errors.hpp"

namespace rtnmpc {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Decision variable of the OCP: one input per row, horizon N rows.
using InputSequence = MatrixXd;

// Discrete-time dynamics x+ = f(x, u) with user-supplied Jacobians.
// f must be deterministic; the Jacobians must match finite differences of f.
struct DiscreteSystem {
    int state_dim = 0;
    int input_dim = 0;
    std::function<VectorXd(const VectorXd&, const VectorXd&)> step;
    std::function<MatrixXd(const VectorXd&, const VectorXd&)> jacobian_x;
    std::function<MatrixXd(const VectorXd&, const VectorXd&)> jacobian_u;
};

// Nonnegative stage cost l(x, u) and terminal cost V_f(x) with gradients.
struct StageCost {
    std::function<double(const VectorXd&, const VectorXd&)> evaluate;
    std::function<VectorXd(const VectorXd&, const VectorXd&)> grad_x;
    std::function<VectorXd(const VectorXd&, const VectorXd&)> grad_u;
    std::function<double(const VectorXd&)> terminal_evaluate;
    std::function<VectorXd(const VectorXd&)> terminal_grad;
};

// Per-coordinate input bounds for one horizon step.
struct Box {
    VectorXd lower;
    VectorXd upper;

    void validate() const;
    VectorXd clamp(const VectorXd& u) const;
    bool contains(const VectorXd& u, double tol = 0.0) const;
};

// Finite-horizon optimal control problem: minimize
//   sum_k l(xi_k, mu_k) + V_f(xi_N)  s.t.  mu_k in box_k.
struct OcpProblem {
    DiscreteSystem system;
    StageCost cost;
    int horizon = 0;
    std::vector<Box> constraints;  // exactly `horizon` entries

    void validate() const;
};

// Forward simulation of mu from x; returns N+1 states with xi_0 = x.
std::vector<VectorXd> rollout(const OcpProblem& problem, const VectorXd& x,
                              const InputSequence& mu);

// OCP objective h(x, mu) evaluated along the rollout.
double running_cost(const OcpProblem& problem, const VectorXd& x,
                    const InputSequence& mu);

// Exact gradient of running_cost w.r.t. mu via one forward rollout and one
// backward costate sweep:
//   lambda_N = grad V_f(xi_N)
//   lambda_k = grad_x l(xi_k, mu_k) + A_k^T lambda_{k+1}
//   dh/dmu_k = grad_u l(xi_k, mu_k) + B_k^T lambda_{k+1}
MatrixXd gradient(const OcpProblem& problem, const VectorXd& x,
                  const InputSequence& mu);

// Central-difference approximation of the gradient; test/diagnostic oracle.
MatrixXd finite_difference_gradient(const OcpProblem& problem, const VectorXd& x,
                                    const InputSequence& mu, double step_size);

}  // namespace rtnmpc
