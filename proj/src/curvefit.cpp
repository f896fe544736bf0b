#include "steerlab/curvefit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "steerlab/errors.hpp"
#include "steerlab/optim.hpp"
#include "steerlab/serialize.hpp"
#include "steerlab/util.hpp"

namespace steerlab {

namespace {

constexpr double kLMin = 1e-6;
constexpr double kPMin = 1e-3;
constexpr double kGapTol = 1e-6;

}  // namespace

void DecayParams::validate() const {
    if (!(m_plus >= 0.0)) throw argument_error("DecayParams: m_plus must be >= 0");
    if (!(m_minus <= 0.0)) throw argument_error("DecayParams: m_minus must be <= 0");
    if (!(L_plus > 0.0) || !(L_minus > 0.0))
        throw argument_error("DecayParams: L_plus and L_minus must be > 0");
    if (!(p_plus > 0.0) || !(p_minus > 0.0))
        throw argument_error("DecayParams: p_plus and p_minus must be > 0");
}

double decay_eval(const DecayParams& d, double m) {
    if (m >= 0.0) {
        const double z = m - d.m_plus;
        return std::pow(1.0 + z * z / d.L_plus, -d.p_plus);
    }
    const double z = m - d.m_minus;
    return std::pow(1.0 + z * z / d.L_minus, -d.p_minus);
}

double pref_model_eval(const PrefFit& f, double m) {
    return (f.alpha * m + f.beta) * decay_eval(f.decay, m) + f.offset;
}

double util_model_eval(const UtilFit& f, double m) {
    return f.beta_u * decay_eval(f.decay, m) + f.offset_u;
}

double r_squared(const std::vector<double>& y, const std::vector<double>& yhat) {
    if (y.size() != yhat.size()) throw argument_error("r_squared: length mismatch");
    if (y.size() < 2) throw argument_error("r_squared: need at least 2 points");
    double mean = 0.0;
    for (double v : y) mean += v;
    mean /= static_cast<double>(y.size());
    double ss_tot = 0.0, ss_res = 0.0;
    for (size_t i = 0; i < y.size(); ++i) {
        ss_tot += (y[i] - mean) * (y[i] - mean);
        ss_res += (y[i] - yhat[i]) * (y[i] - yhat[i]);
    }
    if (ss_tot == 0.0) throw degenerate_input_error("r_squared: y has zero variance");
    return 1.0 - ss_res / ss_tot;
}

namespace {

// One decay branch evaluated at m together with partials in the native
// parameters of that branch.
struct BranchEval {
    double D;
    double dD_dm0;
    double dD_dL;
    double dD_dp;
};

BranchEval eval_branch(double m, double m0, double L, double p) {
    BranchEval e;
    const double z = m - m0;
    const double u = 1.0 + z * z / L;
    const double upow = std::pow(u, -p);
    const double upow1 = upow / u;
    e.D = upow;
    e.dD_dm0 = 2.0 * p * z / L * upow1;
    e.dD_dL = p * z * z / (L * L) * upow1;
    e.dD_dp = -std::log(u) * upow;
    return e;
}

// Unconstrained reparameterization: m_plus = t_p^2, m_minus = -t_m^2,
// L = kLMin + e^l, p = kPMin + e^q. Keeps every bound satisfied by
// construction so the inner solver never needs projection.
struct DecayUnpack {
    DecayParams d;
    double dmp_dt, dmm_dt, dLp_dl, dLm_dl, dpp_dq, dpm_dq;
};

DecayUnpack unpack_decay(const double* t) {
    DecayUnpack u;
    u.d.m_plus = t[0] * t[0];
    u.d.m_minus = -t[1] * t[1];
    u.d.L_plus = kLMin + std::exp(t[2]);
    u.d.L_minus = kLMin + std::exp(t[3]);
    u.d.p_plus = kPMin + std::exp(t[4]);
    u.d.p_minus = kPMin + std::exp(t[5]);
    u.dmp_dt = 2.0 * t[0];
    u.dmm_dt = -2.0 * t[1];
    u.dLp_dl = u.d.L_plus - kLMin;
    u.dLm_dl = u.d.L_minus - kLMin;
    u.dpp_dq = u.d.p_plus - kPMin;
    u.dpm_dq = u.d.p_minus - kPMin;
    return u;
}

std::vector<double> pack_decay(const DecayParams& d) {
    return {std::sqrt(d.m_plus), std::sqrt(-d.m_minus),
            std::log(std::max(d.L_plus - kLMin, 1e-300)),
            std::log(std::max(d.L_minus - kLMin, 1e-300)),
            std::log(std::max(d.p_plus - kPMin, 1e-300)),
            std::log(std::max(d.p_minus - kPMin, 1e-300))};
}

// Sum-of-squares data term plus a quadratic penalty on the origin gap.
// x layout: the linear coefficients first (alpha, beta, offset for the
// preference model; beta_u, offset_u for utility), then the six decay
// transforms in pack_decay order.
struct PenaltyObjective {
    bool pref;
    const std::vector<double>* ms;
    const std::vector<double>* ys;
    double weight;

    double operator()(const std::vector<double>& x, std::vector<double>& g) const {
        // 700 keeps exp() of the log-transformed coordinates finite, so
        // unpacked L/p can grow effectively unbounded without overflowing.
        for (double v : x)
            if (!(std::fabs(v) <= 700.0)) return std::numeric_limits<double>::infinity();
        const size_t nl = pref ? 3 : 2;
        std::fill(g.begin(), g.end(), 0.0);
        const DecayUnpack u = unpack_decay(x.data() + nl);
        double f = 0.0;
        for (size_t i = 0; i < ms->size(); ++i) {
            const double m = (*ms)[i];
            const bool plus = m >= 0.0;
            const BranchEval be = plus
                                      ? eval_branch(m, u.d.m_plus, u.d.L_plus, u.d.p_plus)
                                      : eval_branch(m, u.d.m_minus, u.d.L_minus, u.d.p_minus);
            const double lin = pref ? x[0] * m + x[1] : x[0];
            const double model = lin * be.D + x[nl - 1];
            const double r = model - (*ys)[i];
            f += r * r;
            const double c = 2.0 * r;
            if (pref) {
                g[0] += c * m * be.D;
                g[1] += c * be.D;
                g[2] += c;
            } else {
                g[0] += c * be.D;
                g[1] += c;
            }
            const double dlin = c * lin;
            if (plus) {
                g[nl + 0] += dlin * be.dD_dm0 * u.dmp_dt;
                g[nl + 2] += dlin * be.dD_dL * u.dLp_dl;
                g[nl + 4] += dlin * be.dD_dp * u.dpp_dq;
            } else {
                g[nl + 1] += dlin * be.dD_dm0 * u.dmm_dt;
                g[nl + 3] += dlin * be.dD_dL * u.dLm_dl;
                g[nl + 5] += dlin * be.dD_dp * u.dpm_dq;
            }
        }
        const BranchEval p0 = eval_branch(0.0, u.d.m_plus, u.d.L_plus, u.d.p_plus);
        const BranchEval n0 = eval_branch(0.0, u.d.m_minus, u.d.L_minus, u.d.p_minus);
        const double gap = p0.D - n0.D;
        f += weight * gap * gap;
        const double cg = 2.0 * weight * gap;
        g[nl + 0] += cg * p0.dD_dm0 * u.dmp_dt;
        g[nl + 2] += cg * p0.dD_dL * u.dLp_dl;
        g[nl + 4] += cg * p0.dD_dp * u.dpp_dq;
        g[nl + 1] -= cg * n0.dD_dm0 * u.dmm_dt;
        g[nl + 3] -= cg * n0.dD_dL * u.dLm_dl;
        g[nl + 5] -= cg * n0.dD_dp * u.dpm_dq;
        return f;
    }
};

// Solves the n x n normal equations (n <= 3) with a small ridge for the
// linear-coefficient seed; Gaussian elimination with partial pivoting.
std::vector<double> solve_small(std::vector<std::vector<double>> a, std::vector<double> b) {
    const size_t n = b.size();
    for (size_t i = 0; i < n; ++i) a[i][i] += 1e-9;
    for (size_t col = 0; col < n; ++col) {
        size_t piv = col;
        for (size_t r = col + 1; r < n; ++r)
            if (std::fabs(a[r][col]) > std::fabs(a[piv][col])) piv = r;
        std::swap(a[col], a[piv]);
        std::swap(b[col], b[piv]);
        if (a[col][col] == 0.0) return std::vector<double>(n, 0.0);
        for (size_t r = col + 1; r < n; ++r) {
            const double fac = a[r][col] / a[col][col];
            for (size_t c = col; c < n; ++c) a[r][c] -= fac * a[col][c];
            b[r] -= fac * b[col];
        }
    }
    std::vector<double> x(n, 0.0);
    for (size_t i = n; i-- > 0;) {
        double s = b[i];
        for (size_t c = i + 1; c < n; ++c) s -= a[i][c] * x[c];
        x[i] = s / a[i][i];
    }
    return x;
}

// Least-squares seed for the linear coefficients given a fixed decay shape.
std::vector<double> seed_linear(bool pref, const std::vector<double>& ms,
                                const std::vector<double>& ys, const DecayParams& d) {
    const size_t nl = pref ? 3 : 2;
    std::vector<std::vector<double>> ata(nl, std::vector<double>(nl, 0.0));
    std::vector<double> atb(nl, 0.0);
    for (size_t i = 0; i < ms.size(); ++i) {
        const double D = decay_eval(d, ms[i]);
        std::vector<double> row =
            pref ? std::vector<double>{ms[i] * D, D, 1.0} : std::vector<double>{D, 1.0};
        for (size_t r = 0; r < nl; ++r) {
            for (size_t c = 0; c < nl; ++c) ata[r][c] += row[r] * row[c];
            atb[r] += row[r] * ys[i];
        }
    }
    std::vector<double> x = solve_small(std::move(ata), std::move(atb));
    for (double v : x)
        if (!std::isfinite(v)) return std::vector<double>(nl, 0.0);
    return x;
}

// Makes the origin gap exactly zero when possible by re-solving one tail
// exponent in closed form; the penalty solve has already made the gap tiny,
// so this only nudges the parameters.
void restore_continuity(DecayParams& d) {
    const double dp0 = decay_eval(d, 0.0);
    const double base_m = 1.0 + d.m_minus * d.m_minus / d.L_minus;
    const double dm0 = std::pow(base_m, -d.p_minus);
    if (dp0 == dm0) return;
    if (d.m_minus != 0.0 && dp0 < 1.0) {
        const double cand = -std::log(dp0) / std::log(base_m);
        if (std::isfinite(cand) && cand >= kPMin) {
            d.p_minus = cand;
            return;
        }
    }
    const double base_p = 1.0 + d.m_plus * d.m_plus / d.L_plus;
    if (d.m_plus != 0.0 && dm0 < 1.0) {
        const double cand = -std::log(dm0) / std::log(base_p);
        if (std::isfinite(cand) && cand >= kPMin) d.p_plus = cand;
    }
}

double origin_gap(const DecayParams& d) {
    const double dp0 = std::pow(1.0 + d.m_plus * d.m_plus / d.L_plus, -d.p_plus);
    const double dm0 = std::pow(1.0 + d.m_minus * d.m_minus / d.L_minus, -d.p_minus);
    return std::fabs(dp0 - dm0);
}

struct Candidate {
    std::vector<double> linear;
    DecayParams decay;
    double ssr = std::numeric_limits<double>::infinity();
    double gap = std::numeric_limits<double>::infinity();
    int iters = 0;
    bool converged = false;
};

void validate_fit_curve(const SweepCurve& curve, const char* who) {
    if (curve.points.size() < 9)
        throw argument_error(std::string(who) + ": need at least 9 sweep points");
    bool has_zero = false;
    for (size_t i = 0; i < curve.points.size(); ++i) {
        if (i > 0 && !(curve.points[i - 1].m < curve.points[i].m))
            throw argument_error(std::string(who) + ": grid must be strictly increasing");
        if (curve.points[i].m == 0.0) has_zero = true;
    }
    if (!(curve.points.front().m < 0.0) || !(curve.points.back().m > 0.0) || !has_zero)
        throw argument_error(std::string(who) + ": grid must span both signs and include m=0");
}

json params_json(bool pref, const std::vector<double>& lin, const DecayParams& d) {
    json p;
    if (pref) {
        p["alpha"] = lin[0];
        p["beta"] = lin[1];
        p["offset"] = lin[2];
    } else {
        p["beta_u"] = lin[0];
        p["offset_u"] = lin[1];
    }
    p["m_plus"] = d.m_plus;
    p["m_minus"] = d.m_minus;
    p["L_plus"] = d.L_plus;
    p["L_minus"] = d.L_minus;
    p["p_plus"] = d.p_plus;
    p["p_minus"] = d.p_minus;
    return p;
}

std::pair<Candidate, FitReport> fit_impl(bool pref, const SweepCurve& curve,
                                         const FitOptions& opts) {
    validate_fit_curve(curve, pref ? "fit_pref" : "fit_util");
    const size_t n = curve.points.size();
    std::vector<double> ms(n), ys(n);
    for (size_t i = 0; i < n; ++i) {
        ms[i] = curve.points[i].m;
        ys[i] = pref ? curve.points[i].pref_mean : curve.points[i].util_mean;
        if (!std::isfinite(ys[i]))
            throw argument_error("curve fit: non-finite sweep value at m=" + format_double(ms[i]));
    }
    double mean = 0.0;
    for (double v : ys) mean += v;
    mean /= static_cast<double>(n);
    double variance = 0.0;
    for (double v : ys) variance += (v - mean) * (v - mean);
    if (variance == 0.0)
        throw degenerate_input_error("curve fit: response has zero variance across the grid");

    const double extent = std::max(std::fabs(ms.front()), std::fabs(ms.back()));
    const size_t nl = pref ? 3 : 2;

    // 27 deterministic starts: 3x3 grid over the branch centers crossed with
    // three width/exponent presets; linear coefficients seeded by least
    // squares against each start's decay shape.
    const double center_fracs[3] = {0.0, 0.25, 0.5};
    const double l_scales[3] = {0.1, 1.0, 10.0};
    const double p_inits[3] = {0.5, 1.0, 2.0};

    auto data_ssr = [&](const std::vector<double>& lin, const DecayParams& d) {
        double s = 0.0;
        for (size_t i = 0; i < n; ++i) {
            const double D = decay_eval(d, ms[i]);
            const double model = pref ? (lin[0] * ms[i] + lin[1]) * D + lin[2] : lin[0] * D + lin[1];
            const double r = model - ys[i];
            s += r * r;
        }
        return s;
    };

    std::vector<Candidate> cands;
    int start_idx = 0;
    for (double fp : center_fracs) {
        for (double fm : center_fracs) {
            for (int k = 0; k < 3; ++k) {
                (void)start_idx;
                DecayParams d0;
                d0.m_plus = fp * extent;
                d0.m_minus = -fm * extent;
                d0.L_plus = d0.L_minus = l_scales[k] * extent * extent;
                d0.p_plus = d0.p_minus = p_inits[k];

                const std::vector<double> lin0 = seed_linear(pref, ms, ys, d0);
                const std::vector<double> t = pack_decay(d0);
                std::vector<double> x(nl + 6, 0.0);
                std::copy(lin0.begin(), lin0.end(), x.begin());
                std::copy(t.begin(), t.end(), x.begin() + static_cast<long>(nl));

                Candidate cand;
                cand.converged = true;
                LbfgsOptions lopts;
                lopts.max_iters = opts.max_iters;
                for (double w = 1e2; w <= 1e8 + 1.0; w *= 10.0) {
                    PenaltyObjective obj{pref, &ms, &ys, w};
                    LbfgsResult r = lbfgs_minimize(
                        [&obj](const std::vector<double>& xx, std::vector<double>& gg) {
                            return obj(xx, gg);
                        },
                        x, lopts);
                    x = std::move(r.x);
                    cand.iters += r.iters;
                    if (!r.converged) cand.converged = false;
                }
                cand.linear.assign(x.begin(), x.begin() + static_cast<long>(nl));
                cand.decay = unpack_decay(x.data() + nl).d;
                restore_continuity(cand.decay);
                cand.gap = origin_gap(cand.decay);
                cand.ssr = data_ssr(cand.linear, cand.decay);
                cands.push_back(std::move(cand));
                ++start_idx;
            }
        }
    }

    int best = -1;
    for (size_t i = 0; i < cands.size(); ++i) {
        const Candidate& c = cands[i];
        if (!c.converged || !(c.gap <= kGapTol) || !std::isfinite(c.ssr)) continue;
        if (best < 0 || c.ssr < cands[static_cast<size_t>(best)].ssr) best = static_cast<int>(i);
    }
    if (best < 0) {
        int fallback = 0;
        for (size_t i = 1; i < cands.size(); ++i)
            if (cands[i].ssr < cands[static_cast<size_t>(fallback)].ssr)
                fallback = static_cast<int>(i);
        const Candidate& c = cands[static_cast<size_t>(fallback)];
        json be;
        be["model"] = pref ? "pref" : "util";
        be["params"] = params_json(pref, c.linear, c.decay);
        be["residual_norm"] = std::sqrt(c.ssr);
        be["continuity_gap"] = c.gap;
        be["converged"] = false;
        throw fit_error("no start satisfied the continuity constraint after convergence",
                        be.dump(2));
    }

    const Candidate& win = cands[static_cast<size_t>(best)];
    FitReport rep;
    rep.residual_norm = std::sqrt(win.ssr);
    rep.continuity_gap = win.gap;
    rep.iterations = win.iters;
    rep.winner_start = best;
    rep.converged = true;
    rep.m_lo = ms.front();
    rep.m_hi = ms.back();
    rep.n_points = n;
    rep.seed = opts.seed;

    std::vector<double> yhat(n);
    double d_lo = std::numeric_limits<double>::infinity(), d_hi = -d_lo;
    for (size_t i = 0; i < n; ++i) {
        const double D = decay_eval(win.decay, ms[i]);
        d_lo = std::min(d_lo, D);
        d_hi = std::max(d_hi, D);
        yhat[i] = pref ? (win.linear[0] * ms[i] + win.linear[1]) * D + win.linear[2]
                       : win.linear[0] * D + win.linear[1];
    }
    rep.r2 = r_squared(ys, yhat);
    rep.non_identifiable_offset_split = (d_hi - d_lo) < 1e-3;
    return {win, rep};
}

}  // namespace

std::pair<PrefFit, FitReport> fit_pref(const SweepCurve& curve, const FitOptions& opts) {
    auto [cand, rep] = fit_impl(true, curve, opts);
    PrefFit f;
    f.alpha = cand.linear[0];
    f.beta = cand.linear[1];
    f.offset = cand.linear[2];
    f.decay = cand.decay;
    f.decay.validate();
    return {f, rep};
}

std::pair<UtilFit, FitReport> fit_util(const SweepCurve& curve, const FitOptions& opts) {
    auto [cand, rep] = fit_impl(false, curve, opts);
    UtilFit f;
    f.beta_u = cand.linear[0];
    f.offset_u = cand.linear[1];
    f.decay = cand.decay;
    f.decay.validate();
    return {f, rep};
}

namespace {

template <typename Fit, typename Eval>
double transfer_impl(const Fit& f, const FitReport& report, const SweepCurve& test,
                     bool allow_extrapolation, bool pref, Eval eval) {
    if (test.points.size() < 2) throw argument_error("transfer_eval: need at least 2 test points");
    std::vector<double> y(test.points.size()), yhat(test.points.size());
    for (size_t i = 0; i < test.points.size(); ++i) {
        const double m = test.points[i].m;
        if (!allow_extrapolation && (m < report.m_lo || m > report.m_hi))
            throw argument_error("transfer_eval: test point m=" + format_double(m) +
                                 " outside the fitted range; pass allow_extrapolation to permit");
        y[i] = pref ? test.points[i].pref_mean : test.points[i].util_mean;
        yhat[i] = eval(f, m);
    }
    return r_squared(y, yhat);
}

}  // namespace

double transfer_eval(const PrefFit& f, const FitReport& report, const SweepCurve& test,
                     bool allow_extrapolation) {
    return transfer_impl(f, report, test, allow_extrapolation, true,
                         [](const PrefFit& ff, double m) { return pref_model_eval(ff, m); });
}

double transfer_eval(const UtilFit& f, const FitReport& report, const SweepCurve& test,
                     bool allow_extrapolation) {
    return transfer_impl(f, report, test, allow_extrapolation, false,
                         [](const UtilFit& ff, double m) { return util_model_eval(ff, m); });
}

namespace {

json fit_json_common(const char* model, const json& params, const FitReport& rep) {
    json j;
    j["model"] = model;
    j["params"] = params;
    j["r2"] = rep.r2;
    j["continuity_gap"] = rep.continuity_gap;
    j["n_points"] = rep.n_points;
    j["seed"] = rep.seed;
    j["converged"] = rep.converged;
    return j;
}

DecayParams decay_from_params(const json& p) {
    DecayParams d;
    d.m_plus = p.at("m_plus").get<double>();
    d.m_minus = p.at("m_minus").get<double>();
    d.L_plus = p.at("L_plus").get<double>();
    d.L_minus = p.at("L_minus").get<double>();
    d.p_plus = p.at("p_plus").get<double>();
    d.p_minus = p.at("p_minus").get<double>();
    d.validate();
    return d;
}

FitReport report_from_json(const json& j) {
    FitReport rep;
    rep.r2 = j.at("r2").get<double>();
    rep.continuity_gap = j.at("continuity_gap").get<double>();
    rep.n_points = j.at("n_points").get<size_t>();
    rep.seed = j.at("seed").get<uint64_t>();
    rep.converged = j.at("converged").get<bool>();
    // The artifact does not record the fitted grid range; callers that want
    // extrapolation policing restore it from the training sweep.
    rep.m_lo = -std::numeric_limits<double>::infinity();
    rep.m_hi = std::numeric_limits<double>::infinity();
    return rep;
}

}  // namespace

json fit_to_json(const PrefFit& f, const FitReport& report) {
    return fit_json_common("pref", params_json(true, {f.alpha, f.beta, f.offset}, f.decay),
                           report);
}

json fit_to_json(const UtilFit& f, const FitReport& report) {
    return fit_json_common("util", params_json(false, {f.beta_u, f.offset_u}, f.decay), report);
}

std::pair<PrefFit, FitReport> pref_fit_from_json(const json& j) {
    try {
        if (j.at("model").get<std::string>() != "pref")
            throw parse_error("fit JSON: expected model \"pref\"");
        const json& p = j.at("params");
        PrefFit f;
        f.alpha = p.at("alpha").get<double>();
        f.beta = p.at("beta").get<double>();
        f.offset = p.at("offset").get<double>();
        f.decay = decay_from_params(p);
        return {f, report_from_json(j)};
    } catch (const json::exception& e) {
        throw parse_error(std::string("fit JSON: ") + e.what());
    }
}

std::pair<UtilFit, FitReport> util_fit_from_json(const json& j) {
    try {
        if (j.at("model").get<std::string>() != "util")
            throw parse_error("fit JSON: expected model \"util\"");
        const json& p = j.at("params");
        UtilFit f;
        f.beta_u = p.at("beta_u").get<double>();
        f.offset_u = p.at("offset_u").get<double>();
        f.decay = decay_from_params(p);
        return {f, report_from_json(j)};
    } catch (const json::exception& e) {
        throw parse_error(std::string("fit JSON: ") + e.what());
    }
}

}  // namespace steerlab
