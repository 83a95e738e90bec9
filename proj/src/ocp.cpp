#include "rtnmpc/ocp.hpp"

#include <cmath>
#include <string>

namespace rtnmpc {

void Box::validate() const {
    if (lower.size() != upper.size())
        throw ShapeError("box lower/upper dimension mismatch");
    for (Eigen::Index i = 0; i < lower.size(); ++i) {
        if (!(lower[i] <= upper[i]))
            throw ConfigError("empty box: lower > upper at coordinate " + std::to_string(i));
    }
}

VectorXd Box::clamp(const VectorXd& u) const {
    if (u.size() != lower.size()) throw ShapeError("input dimension does not match box");
    return u.cwiseMax(lower).cwiseMin(upper);
}

bool Box::contains(const VectorXd& u, double tol) const {
    if (u.size() != lower.size()) return false;
    return (u.array() >= lower.array() - tol).all() && (u.array() <= upper.array() + tol).all();
}

void OcpProblem::validate() const {
    if (horizon < 1) throw ConfigError("horizon must be >= 1");
    if (static_cast<int>(constraints.size()) != horizon)
        throw ConfigError("need exactly one input box per horizon step");
    for (const Box& b : constraints) {
        b.validate();
        if (b.lower.size() != system.input_dim)
            throw ConfigError("box dimension does not match input_dim");
    }
    if (system.state_dim < 1 || system.input_dim < 1)
        throw ConfigError("system dimensions must be positive");
    if (!system.step || !system.jacobian_x || !system.jacobian_u)
        throw ConfigError("system callbacks must all be set");
    if (!cost.evaluate || !cost.grad_x || !cost.grad_u || !cost.terminal_evaluate ||
        !cost.terminal_grad)
        throw ConfigError("cost callbacks must all be set");
}

namespace {

void check_shapes(const OcpProblem& problem, const VectorXd& x, const InputSequence& mu) {
    if (x.size() != problem.system.state_dim)
        throw ShapeError("state has dimension " + std::to_string(x.size()) + ", expected " +
                         std::to_string(problem.system.state_dim));
    if (mu.rows() != problem.horizon || mu.cols() != problem.system.input_dim)
        throw ShapeError("input sequence is " + std::to_string(mu.rows()) + "x" +
                         std::to_string(mu.cols()) + ", expected " +
                         std::to_string(problem.horizon) + "x" +
                         std::to_string(problem.system.input_dim));
}

}  // namespace

std::vector<VectorXd> rollout(const OcpProblem& problem, const VectorXd& x,
                              const InputSequence& mu) {
    check_shapes(problem, x, mu);
    std::vector<VectorXd> xi;
    xi.reserve(problem.horizon + 1);
    xi.push_back(x);
    for (int k = 0; k < problem.horizon; ++k) {
        VectorXd next = problem.system.step(xi.back(), mu.row(k).transpose());
        if (!next.allFinite())
            throw DivergenceError("non-finite state at rollout step " + std::to_string(k));
        xi.push_back(std::move(next));
    }
    return xi;
}

double running_cost(const OcpProblem& problem, const VectorXd& x, const InputSequence& mu) {
    const auto xi = rollout(problem, x, mu);
    double total = 0.0;
    for (int k = 0; k < problem.horizon; ++k)
        total += problem.cost.evaluate(xi[k], mu.row(k).transpose());
    total += problem.cost.terminal_evaluate(xi.back());
    if (!std::isfinite(total)) throw DivergenceError("non-finite running cost");
    return total;
}

MatrixXd gradient(const OcpProblem& problem, const VectorXd& x, const InputSequence& mu) {
    const auto xi = rollout(problem, x, mu);
    MatrixXd grad(problem.horizon, problem.system.input_dim);
    VectorXd lambda = problem.cost.terminal_grad(xi.back());
    for (int k = problem.horizon - 1; k >= 0; --k) {
        const VectorXd u = mu.row(k).transpose();
        const MatrixXd A = problem.system.jacobian_x(xi[k], u);
        const MatrixXd B = problem.system.jacobian_u(xi[k], u);
        grad.row(k) = (problem.cost.grad_u(xi[k], u) + B.transpose() * lambda).transpose();
        lambda = problem.cost.grad_x(xi[k], u) + A.transpose() * lambda;
    }
    if (!grad.allFinite()) throw DivergenceError("non-finite gradient");
    return grad;
}

MatrixXd finite_difference_gradient(const OcpProblem& problem, const VectorXd& x,
                                    const InputSequence& mu, double step_size) {
    if (!(step_size > 0)) throw ConfigError("step_size must be positive");
    check_shapes(problem, x, mu);
    MatrixXd grad(mu.rows(), mu.cols());
    InputSequence perturbed = mu;
    for (Eigen::Index k = 0; k < mu.rows(); ++k) {
        for (Eigen::Index j = 0; j < mu.cols(); ++j) {
            perturbed(k, j) = mu(k, j) + step_size;
            const double up = running_cost(problem, x, perturbed);
            perturbed(k, j) = mu(k, j) - step_size;
            const double down = running_cost(problem, x, perturbed);
            perturbed(k, j) = mu(k, j);
            grad(k, j) = (up - down) / (2.0 * step_size);
        }
    }
    if (!grad.allFinite()) throw DivergenceError("non-finite cost during perturbation");
    return grad;
}

}  // namespace rtnmpc
