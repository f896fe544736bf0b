#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "steerlab/measurement.hpp"
#include "steerlab/serialize.hpp"

namespace steerlab {

// Piecewise rational-quadratic validity decay. The positive branch (m >= 0)
// peaks at m_plus, the negative branch at m_minus; L controls width and p the
// tail exponent. Fitted instances additionally satisfy a continuity condition
// at the origin: |D(0-) - D(0+)| <= 1e-6.
struct DecayParams {
    double m_plus = 0.0;   // >= 0
    double m_minus = 0.0;  // <= 0
    double L_plus = 1.0;   // > 0
    double L_minus = 1.0;  // > 0
    double p_plus = 1.0;   // > 0
    double p_minus = 1.0;  // > 0

    void validate() const;  // throws argument_error on constraint violation
};

// Preference log-odds model: (alpha*m + beta) * D(m) + offset.
struct PrefFit {
    double alpha = 0.0;
    double beta = 0.0;
    double offset = 0.0;
    DecayParams decay;
};

// Utility log-odds model: beta_u * D(m) + offset_u.
struct UtilFit {
    double beta_u = 0.0;
    double offset_u = 0.0;
    DecayParams decay;
};

struct FitReport {
    double r2 = 0.0;              // <= 1 by construction
    double residual_norm = 0.0;   // sqrt of the summed squared residuals
    double continuity_gap = 0.0;  // |D(0-) - D(0+)| of the returned decay
    int iterations = 0;           // inner optimizer iterations of the winner
    int winner_start = -1;        // multistart index of the winning start
    bool converged = false;
    // Fitted grid range, used by transfer_eval to police extrapolation.
    double m_lo = 0.0;
    double m_hi = 0.0;
    size_t n_points = 0;
    uint64_t seed = 0;  // echoed from FitOptions for provenance
    // True when the fitted decay is within 1e-3 of constant across the grid,
    // in which case beta and offset are not separately identifiable.
    bool non_identifiable_offset_split = false;
};

struct FitOptions {
    uint64_t seed = 0;   // recorded in the report; the start grid is deterministic
    int max_iters = 300; // per penalty stage
};

double decay_eval(const DecayParams& d, double m);
double pref_model_eval(const PrefFit& f, double m);
double util_model_eval(const UtilFit& f, double m);

// Least-squares fits over all sweep grid points, subject to the sign/bound
// constraints on DecayParams and the origin-continuity equality constraint.
// The equality constraint is enforced by a geometrically increasing quadratic
// penalty (1e2 -> 1e8) around an L-BFGS inner solve, followed by an exact
// restoration step; 27 deterministic starts, best post-restoration residual
// wins. Throws degenerate_input_error on zero-variance curves and fit_error
// (carrying best-effort parameters as JSON) when no start converges.
std::pair<PrefFit, FitReport> fit_pref(const SweepCurve& curve, const FitOptions& opts = {});
std::pair<UtilFit, FitReport> fit_util(const SweepCurve& curve, const FitOptions& opts = {});

// 1 - SS_res/SS_tot. Throws degenerate_input_error when y has zero variance.
double r_squared(const std::vector<double>& y, const std::vector<double>& yhat);

// Evaluates a frozen fit on a fresh curve and returns the R^2 of its
// predictions (may be negative). Unless allow_extrapolation is set, every
// test point must lie inside the range the fit was trained on.
double transfer_eval(const PrefFit& f, const FitReport& report, const SweepCurve& test,
                     bool allow_extrapolation = false);
double transfer_eval(const UtilFit& f, const FitReport& report, const SweepCurve& test,
                     bool allow_extrapolation = false);

// Canonical artifact form: {model, params, r2, continuity_gap, n_points,
// seed, converged}. The inverse accepts exactly that shape.
json fit_to_json(const PrefFit& f, const FitReport& report);
json fit_to_json(const UtilFit& f, const FitReport& report);
std::pair<PrefFit, FitReport> pref_fit_from_json(const json& j);
std::pair<UtilFit, FitReport> util_fit_from_json(const json& j);

}  // namespace steerlab
