#pragma once

#include <Eigen/Dense>
#include <utility>

#include "rtnmpc/ocp.hpp"

namespace rtnmpc {

// Transfer/elimination rate constants of a four-compartment drug model, 1/min,
// plus the central-compartment volume v1 (liters) coupling infusion rate to
// central concentration.
struct DrugRates {
    double k12 = 0, k13 = 0, k10 = 0, k21 = 0, k31 = 0, k1e = 0, ke0 = 0;
    double v1 = 1.0;
};

struct PkRates {
    DrugRates propofol;
    DrugRates remifentanil;
};

// Hill-surface parameters of the propofol/remifentanil interaction.
struct PdParams {
    double c50p = 1.8;   // ug/ml
    double c50r = 12.5;  // ng/ml
    double e0 = 100.0;
    double emax = 100.0;
    double eta = 3.76;
    double beta = 5.1;

    void validate() const;
};

// State layout: [C1 C2 C3 Ce]_propofol, [C1 C2 C3 Ce]_remifentanil.
inline constexpr int kStateDim = 8;
inline constexpr int kInputDim = 2;
inline constexpr int kEffectSiteP = 3;
inline constexpr int kEffectSiteR = 7;

// Block-diagonal continuous-time PK matrices; Bc feeds each drug's central
// compartment with gain 1/v1.
std::pair<MatrixXd, MatrixXd> build_pk_matrices(const PkRates& rates);

// Exact zero-order-hold discretization via the augmented matrix exponential.
std::pair<MatrixXd, MatrixXd> discretize(const MatrixXd& Ac, const MatrixXd& Bc, double ts);

// BIS Hill surface for interacting effect-site concentrations, expressed in
// the same units as the corresponding C50 values.
double bis(double ce_p, double ce_r, const PdParams& pd);

// Analytic partials (dBIS/dce_p, dBIS/dce_r); both nonpositive.
std::pair<double, double> bis_gradient(double ce_p, double ce_r, const PdParams& pd);

struct PatientModel {
    double weight_kg = 70.0;
    PkRates pk;
    PdParams pd;
    double ts_min = 0.1;
    MatrixXd Ac, Bc;  // 8x8, 8x2 continuous
    MatrixXd Ad, Bd;  // ZOH pair at ts_min

    static PatientModel build(double weight_kg, const PkRates& pk, const PdParams& pd,
                              double ts_min);

    double bis_output(const VectorXd& x) const;
    std::pair<double, double> bis_output_gradient(const VectorXd& x) const;
};

// Linear 8-state 2-input DiscreteSystem with constant Jacobians Ad, Bd.
DiscreteSystem patient_system(const PatientModel& model);

// Per-kg infusion caps switching from induction to maintenance levels.
struct InputBoundsSchedule {
    double induction_minutes = 10.0;
    double induction_up_per_kg = 4.0;     // mg/(kg min)
    double induction_ur_per_kg = 0.36;    // ug/(kg min)
    double maintenance_up_per_kg = 0.8;
    double maintenance_ur_per_kg = 0.07;

    void validate() const;
};

// Absolute input box (mg/min, ug/min) active at time t; the maintenance
// bounds apply from t == induction_minutes on.
Box bounds_at(const InputBoundsSchedule& schedule, double t_min, double weight_kg);

}  // namespace rtnmpc
