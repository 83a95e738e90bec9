#include "rtnmpc/pkpd.hpp"

#include <unsupported/Eigen/MatrixFunctions>

#include <cmath>
#include <string>

namespace rtnmpc {

void PdParams::validate() const {
    if (!(c50p > 0 && c50r > 0)) throw ConfigError("C50 values must be positive");
    if (!(eta > 0)) throw ConfigError("eta must be positive");
    if (!(emax > 0)) throw ConfigError("emax must be positive");
    if (!(beta >= 0)) throw ConfigError("beta must be nonnegative");
    if (!(e0 >= 0 && e0 <= 100)) throw ConfigError("e0 must lie in [0, 100]");
}

namespace {

void validate_rates(const DrugRates& r, const char* drug) {
    const double rates[] = {r.k12, r.k13, r.k10, r.k21, r.k31, r.k1e, r.ke0};
    for (double k : rates)
        if (!(k >= 0))
            throw ConfigError(std::string("negative transfer rate for ") + drug);
    if (!(r.ke0 > 0))
        throw ConfigError(std::string("ke0 must be positive for ") + drug);
    if (!(r.v1 > 0))
        throw ConfigError(std::string("v1 must be positive for ") + drug);
}

// 4x4 compartment block: central, two peripheral, effect site.
Eigen::Matrix4d drug_block(const DrugRates& r) {
    Eigen::Matrix4d a = Eigen::Matrix4d::Zero();
    a(0, 0) = -(r.k12 + r.k13 + r.k10);
    a(0, 1) = r.k21;
    a(0, 2) = r.k31;
    a(1, 0) = r.k12;
    a(1, 1) = -r.k21;
    a(2, 0) = r.k13;
    a(2, 2) = -r.k31;
    a(3, 0) = r.k1e;
    a(3, 3) = -r.ke0;
    return a;
}

}  // namespace

std::pair<MatrixXd, MatrixXd> build_pk_matrices(const PkRates& rates) {
    validate_rates(rates.propofol, "propofol");
    validate_rates(rates.remifentanil, "remifentanil");
    MatrixXd Ac = MatrixXd::Zero(kStateDim, kStateDim);
    Ac.block<4, 4>(0, 0) = drug_block(rates.propofol);
    Ac.block<4, 4>(4, 4) = drug_block(rates.remifentanil);
    MatrixXd Bc = MatrixXd::Zero(kStateDim, kInputDim);
    Bc(0, 0) = 1.0 / rates.propofol.v1;
    Bc(4, 1) = 1.0 / rates.remifentanil.v1;
    return {Ac, Bc};
}

std::pair<MatrixXd, MatrixXd> discretize(const MatrixXd& Ac, const MatrixXd& Bc, double ts) {
    if (!(ts > 0)) throw ConfigError("sampling time must be positive");
    if (Ac.rows() != Ac.cols() || Bc.rows() != Ac.rows())
        throw ShapeError("Ac/Bc dimensions inconsistent");
    const Eigen::Index n = Ac.rows();
    const Eigen::Index m = Bc.cols();
    MatrixXd aug = MatrixXd::Zero(n + m, n + m);
    aug.topLeftCorner(n, n) = Ac * ts;
    aug.topRightCorner(n, m) = Bc * ts;
    const MatrixXd expm = aug.exp();
    MatrixXd Ad = expm.topLeftCorner(n, n);
    MatrixXd Bd = expm.topRightCorner(n, m);
    if (!Ad.allFinite() || !Bd.allFinite())
        throw DivergenceError("non-finite entries in ZOH discretization");
    return {Ad, Bd};
}

namespace {

double interaction_potency(double ce_p, double ce_r, const PdParams& pd) {
    if (ce_p < 0 || ce_r < 0)
        throw ConfigError("effect-site concentrations must be nonnegative");
    const double up = ce_p / pd.c50p;
    const double ur = ce_r / pd.c50r;
    return up + ur + pd.beta * up * ur;
}

}  // namespace

double bis(double ce_p, double ce_r, const PdParams& pd) {
    const double u = interaction_potency(ce_p, ce_r, pd);
    const double un = std::pow(u, pd.eta);
    return pd.e0 - pd.emax * un / (un + 1.0);
}

std::pair<double, double> bis_gradient(double ce_p, double ce_r, const PdParams& pd) {
    const double u = interaction_potency(ce_p, ce_r, pd);
    // d/dU [U^eta / (U^eta + 1)] = eta U^(eta-1) / (U^eta + 1)^2
    double dbis_du = 0.0;
    if (u > 0) {
        const double un = std::pow(u, pd.eta);
        const double denom = (un + 1.0) * (un + 1.0);
        dbis_du = -pd.emax * pd.eta * std::pow(u, pd.eta - 1.0) / denom;
    }
    const double du_dp = (1.0 + pd.beta * ce_r / pd.c50r) / pd.c50p;
    const double du_dr = (1.0 + pd.beta * ce_p / pd.c50p) / pd.c50r;
    return {dbis_du * du_dp, dbis_du * du_dr};
}

PatientModel PatientModel::build(double weight_kg, const PkRates& pk, const PdParams& pd,
                                 double ts_min) {
    if (!(weight_kg > 0)) throw ConfigError("weight must be positive");
    pd.validate();
    PatientModel model;
    model.weight_kg = weight_kg;
    model.pk = pk;
    model.pd = pd;
    model.ts_min = ts_min;
    std::tie(model.Ac, model.Bc) = build_pk_matrices(pk);
    std::tie(model.Ad, model.Bd) = discretize(model.Ac, model.Bc, ts_min);
    return model;
}

double PatientModel::bis_output(const VectorXd& x) const {
    return bis(x[kEffectSiteP], x[kEffectSiteR], pd);
}

std::pair<double, double> PatientModel::bis_output_gradient(const VectorXd& x) const {
    return bis_gradient(x[kEffectSiteP], x[kEffectSiteR], pd);
}

DiscreteSystem patient_system(const PatientModel& model) {
    DiscreteSystem sys;
    sys.state_dim = kStateDim;
    sys.input_dim = kInputDim;
    const MatrixXd Ad = model.Ad;
    const MatrixXd Bd = model.Bd;
    sys.step = [Ad, Bd](const VectorXd& x, const VectorXd& u) -> VectorXd {
        return Ad * x + Bd * u;
    };
    sys.jacobian_x = [Ad](const VectorXd&, const VectorXd&) { return Ad; };
    sys.jacobian_u = [Bd](const VectorXd&, const VectorXd&) { return Bd; };
    return sys;
}

void InputBoundsSchedule::validate() const {
    const double values[] = {induction_minutes, induction_up_per_kg, induction_ur_per_kg,
                             maintenance_up_per_kg, maintenance_ur_per_kg};
    for (double v : values)
        if (!(v >= 0)) throw ConfigError("input bounds must be nonnegative");
    if (maintenance_up_per_kg > induction_up_per_kg ||
        maintenance_ur_per_kg > induction_ur_per_kg)
        throw ConfigError("maintenance bounds must not exceed induction bounds");
}

Box bounds_at(const InputBoundsSchedule& schedule, double t_min, double weight_kg) {
    schedule.validate();
    if (t_min < 0) throw ConfigError("time must be nonnegative");
    Box box;
    box.lower = VectorXd::Zero(kInputDim);
    box.upper = VectorXd(kInputDim);
    const bool induction = t_min < schedule.induction_minutes;
    box.upper[0] =
        (induction ? schedule.induction_up_per_kg : schedule.maintenance_up_per_kg) * weight_kg;
    box.upper[1] =
        (induction ? schedule.induction_ur_per_kg : schedule.maintenance_ur_per_kg) * weight_kg;
    return box;
}

}  // namespace rtnmpc
