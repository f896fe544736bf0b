#pragma once

#include <string>
#include <vector>

#include "steerlab/model.hpp"

namespace steerlab {

// One matched polarity pair: a shared query with a concept-positive and a
// concept-negative completion.
struct PolarityExample {
    std::vector<size_t> query;
    std::vector<size_t> pos_answer;
    std::vector<size_t> neg_answer;
    std::string concept_id;
};

// Teacher-forced losses of the two completions under identical hooks.
struct LossPair {
    double lp = 0.0;  // -log P(pos_answer | query)
    double ln = 0.0;  // -log P(neg_answer | query)
    bool normalized = false;
};

struct UtilOddsResult {
    double value = 0.0;
    bool clamped = false;
};

struct MeasureConfig {
    double mass_cap = 1.0 - 1e-6;
    bool length_normalize = false;
    // Steering position switch: when true, hooks apply only at the answer
    // token positions instead of every position.
    bool answer_positions_only = false;
};

// Preference log-odds: L_n - L_p.  Positive means the model prefers the
// concept-positive completion.
double pref_odds(const LossPair& lp);

// Utility log-odds: with S = e^{-L_p} + e^{-L_n} (the probability mass on
// the matched pair), returns log(S / (1-S)).  S is clamped to mass_cap to
// keep the result finite when a model concentrates all mass on the pair.
UtilOddsResult util_odds(const LossPair& lp, double mass_cap = 1.0 - 1e-6);

// Measures both completions of `ex` under the intervention at scale m1=m2=m.
LossPair measure_pair(const LanguageModel& model, const SiteId& site, const Intervention& iv,
                      double m, const PolarityExample& ex, const MeasureConfig& cfg = {});

struct SweepPoint {
    double m = 0.0;
    double pref_mean = 0.0, pref_std = 0.0;
    double util_mean = 0.0, util_std = 0.0;
    size_t n = 0;
    double clamped_frac = 0.0;
    std::vector<double> pref_raw, util_raw;  // per example, input order
};

struct SweepCurve {
    std::vector<double> m_grid;       // strictly increasing, contains 0
    std::vector<SweepPoint> points;   // one per grid value
};

// Measures every example at every grid point.  The grid may arrive in any
// order but must contain 0 and have no duplicates.
SweepCurve sweep(const LanguageModel& model, const SiteId& site, const Intervention& iv,
                 const std::vector<PolarityExample>& examples, std::vector<double> m_grid,
                 const MeasureConfig& cfg = {});

// A symmetric grid of `points` values spanning [-extent, extent]; points must
// be odd so the grid contains 0 exactly.
std::vector<double> symmetric_grid(double extent, size_t points);

// CSV round trip (means only; raw values live in the JSONL sidecar).
std::string sweep_to_csv(const SweepCurve& curve);
SweepCurve sweep_from_csv(const std::string& text);
void save_sweep_csv(const SweepCurve& curve, const std::string& path);
SweepCurve load_sweep_csv(const std::string& path);
void save_sweep_raw_jsonl(const SweepCurve& curve, const std::string& path);

// Diagnostic segmentation of the preference curve into Linear /
// Transitional / Convergence regions on each side of m=0, walking outward
// from the origin.  The maximal outer run of near-zero slope (|slope| <=
// flat_tol) is Convergence; the maximal inner run of near-constant slope
// (within slope_tol of the innermost slope) before it is Linear.
enum class RegionLabel { linear, transitional, convergence };

struct BranchRegions {
    std::vector<double> m_values;      // ordered outward from 0
    std::vector<RegionLabel> labels;   // parallel to m_values
};

struct CurveRegions {
    BranchRegions positive, negative;
};

CurveRegions classify_regions(const SweepCurve& curve, double slope_tol, double flat_tol);

}  // namespace steerlab
