#include <cmath>

#include "doctest.h"
#include "steerlab/curvefit.hpp"
#include "steerlab/errors.hpp"
#include "steerlab/optim.hpp"
#include "steerlab/util.hpp"

using namespace steerlab;

namespace {

DecayParams symmetric_decay(double m, double L, double p) {
    DecayParams d;
    d.m_plus = m;
    d.m_minus = -m;
    d.L_plus = d.L_minus = L;
    d.p_plus = d.p_minus = p;
    return d;
}

SweepCurve curve_from(const std::vector<double>& grid, const std::vector<double>& pref,
                      const std::vector<double>& util) {
    SweepCurve c;
    c.m_grid = grid;
    for (size_t i = 0; i < grid.size(); ++i) {
        SweepPoint p;
        p.m = grid[i];
        p.pref_mean = pref.empty() ? 0.0 : pref[i];
        p.util_mean = util.empty() ? 0.0 : util[i];
        p.n = 1;
        c.points.push_back(p);
    }
    return c;
}

}  // namespace

TEST_CASE("decay_eval closed-form points") {
    DecayParams d = symmetric_decay(2.0, 5.0, 1.3);
    CHECK(decay_eval(d, 2.0) == 1.0);
    CHECK(decay_eval(d, -2.0) == 1.0);

    DecayParams unit = symmetric_decay(0.0, 1.0, 1.0);
    CHECK(decay_eval(unit, 1.0) == doctest::Approx(0.5).epsilon(1e-15));

    DecayParams neg;
    neg.m_minus = -1.0;
    neg.L_minus = 4.0;
    neg.p_minus = 2.0;
    CHECK(decay_eval(neg, -2.0) == doctest::Approx(0.64).epsilon(1e-15));

    // range and monotone falloff away from the branch peak
    DecayParams g = symmetric_decay(1.0, 2.0, 0.7);
    double prev = decay_eval(g, 1.0);
    CHECK(prev == 1.0);
    for (double m = 1.2; m < 8.0; m += 0.2) {
        const double v = decay_eval(g, m);
        CHECK(v > 0.0);
        CHECK(v < prev);
        prev = v;
    }
    CHECK_THROWS_AS(
        [] {
            DecayParams bad;
            bad.m_plus = -1.0;
            bad.validate();
        }(),
        argument_error);
}

TEST_CASE("pref and util model evaluation") {
    PrefFit f;
    f.alpha = 2.0;
    f.beta = 1.0;
    f.offset = 0.5;
    f.decay = symmetric_decay(0.0, 1e12, 1.0);
    CHECK(pref_model_eval(f, 1.0) == doctest::Approx(3.5).epsilon(1e-9));

    // at the branch peak the decay is exactly one
    f.decay = symmetric_decay(1.5, 3.0, 1.1);
    CHECK(pref_model_eval(f, 1.5) == 2.0 * 1.5 + 1.0 + 0.5);

    // D(0) = (1 + 1/2)^{-1} = 2/3 for m_+ = 1, L = 2, p = 1
    f.decay = symmetric_decay(1.0, 2.0, 1.0);
    CHECK(pref_model_eval(f, 0.0) == doctest::Approx(1.0 * (2.0 / 3.0) + 0.5).epsilon(1e-15));

    // effectively-constant decay keeps the model linear with slope alpha
    f.decay = symmetric_decay(0.0, 1e12, 1.0);
    const double slope = (pref_model_eval(f, 2.0) - pref_model_eval(f, -2.0)) / 4.0;
    CHECK(slope == doctest::Approx(2.0).epsilon(1e-9));

    UtilFit u;
    u.beta_u = 4.0;
    u.offset_u = -1.0;
    u.decay = symmetric_decay(1.5, 3.0, 1.1);
    CHECK(util_model_eval(u, 1.5) == 3.0);
    u.beta_u = 0.0;
    CHECK(util_model_eval(u, -7.3) == -1.0);
    u.beta_u = 4.0;
    u.decay = symmetric_decay(0.0, 1.0, 1.0);
    CHECK(util_model_eval(u, 1e9) == doctest::Approx(-1.0).epsilon(1e-9));
}

TEST_CASE("r_squared hand values and errors") {
    std::vector<double> y{1.0, 2.0, 3.0};
    CHECK(r_squared(y, y) == 1.0);
    CHECK(r_squared(y, {2.0, 2.0, 2.0}) == 0.0);
    CHECK(r_squared(y, {3.0, 2.0, 1.0}) == -3.0);
    CHECK_THROWS_AS(r_squared({5.0, 5.0}, {5.0, 4.0}), degenerate_input_error);
    CHECK_THROWS_AS(r_squared(y, {1.0, 2.0}), argument_error);
    CHECK_THROWS_AS(r_squared({1.0}, {1.0}), argument_error);
}

TEST_CASE("lbfgs_minimize solves standard problems") {
    // convex quadratic: (x-3)^2 + 10(y+1)^2
    auto quad = [](const std::vector<double>& x, std::vector<double>& g) {
        g[0] = 2.0 * (x[0] - 3.0);
        g[1] = 20.0 * (x[1] + 1.0);
        return (x[0] - 3.0) * (x[0] - 3.0) + 10.0 * (x[1] + 1.0) * (x[1] + 1.0);
    };
    auto r = lbfgs_minimize(quad, {0.0, 0.0});
    CHECK(r.converged);
    CHECK(r.x[0] == doctest::Approx(3.0).epsilon(1e-7));
    CHECK(r.x[1] == doctest::Approx(-1.0).epsilon(1e-7));

    // Rosenbrock from the classic start
    auto rosen = [](const std::vector<double>& x, std::vector<double>& g) {
        const double a = 1.0 - x[0];
        const double b = x[1] - x[0] * x[0];
        g[0] = -2.0 * a - 400.0 * x[0] * b;
        g[1] = 200.0 * b;
        return a * a + 100.0 * b * b;
    };
    auto r2 = lbfgs_minimize(rosen, {-1.2, 1.0});
    CHECK(r2.converged);
    CHECK(r2.x[0] == doctest::Approx(1.0).epsilon(1e-5));
    CHECK(r2.x[1] == doctest::Approx(1.0).epsilon(1e-5));

    CHECK_THROWS_AS(lbfgs_minimize(quad, {}), argument_error);
}

TEST_CASE("fit_pref recovers a planted curve exactly without noise") {
    PrefFit planted;
    planted.alpha = 1.8;
    planted.beta = 0.7;
    planted.offset = 0.4;
    planted.decay = symmetric_decay(1.5, 4.0, 1.2);

    const auto grid = symmetric_grid(6.0, 33);
    std::vector<double> ys;
    for (double m : grid) ys.push_back(pref_model_eval(planted, m));
    const SweepCurve curve = curve_from(grid, ys, {});

    auto [fit, rep] = fit_pref(curve);
    CHECK(rep.converged);
    CHECK(rep.r2 >= 1.0 - 1e-9);
    CHECK(rep.r2 <= 1.0);
    CHECK(rep.continuity_gap <= 1e-6);
    CHECK(fit.alpha == doctest::Approx(planted.alpha).epsilon(1e-3));
    CHECK(rep.n_points == 33);

    // determinism: bit-identical results on a rerun
    auto [fit2, rep2] = fit_pref(curve);
    CHECK(fit2.alpha == fit.alpha);
    CHECK(fit2.beta == fit.beta);
    CHECK(fit2.offset == fit.offset);
    CHECK(fit2.decay.m_plus == fit.decay.m_plus);
    CHECK(fit2.decay.p_minus == fit.decay.p_minus);
    CHECK(rep2.r2 == rep.r2);
    CHECK(rep2.winner_start == rep.winner_start);
}

TEST_CASE("fit_pref recovers planted parameters under noise") {
    PrefFit planted;
    planted.alpha = 1.8;
    planted.beta = 0.7;
    planted.offset = 0.4;
    planted.decay = symmetric_decay(1.5, 4.0, 1.2);

    const auto grid = symmetric_grid(6.0, 33);
    Rng rng(41);
    std::vector<double> ys;
    for (double m : grid) ys.push_back(pref_model_eval(planted, m) + 0.02 * rng.normal());
    auto [fit, rep] = fit_pref(curve_from(grid, ys, {}));
    CHECK(rep.converged);
    CHECK(rep.r2 >= 0.99);
    CHECK(rep.continuity_gap <= 1e-6);
}

TEST_CASE("fit_util recovers a planted pure-decay curve") {
    UtilFit planted;
    planted.beta_u = 3.2;
    planted.offset_u = -2.5;
    planted.decay = symmetric_decay(0.8, 3.0, 1.4);

    const auto grid = symmetric_grid(6.0, 33);
    std::vector<double> clean;
    for (double m : grid) clean.push_back(util_model_eval(planted, m));
    auto [fit, rep] = fit_util(curve_from(grid, {}, clean));
    CHECK(rep.converged);
    CHECK(rep.r2 >= 1.0 - 1e-9);
    CHECK(rep.continuity_gap <= 1e-6);

    Rng rng(42);
    std::vector<double> noisy;
    for (double m : grid) noisy.push_back(util_model_eval(planted, m) + 0.02 * rng.normal());
    auto [fitn, repn] = fit_util(curve_from(grid, {}, noisy));
    CHECK(repn.r2 >= 0.99);
    CHECK(repn.continuity_gap <= 1e-6);
}

TEST_CASE("degenerate and malformed curves are rejected") {
    const auto grid = symmetric_grid(4.0, 11);
    std::vector<double> flat(grid.size(), 1.25);
    CHECK_THROWS_AS(fit_pref(curve_from(grid, flat, {})), degenerate_input_error);
    CHECK_THROWS_AS(fit_util(curve_from(grid, {}, flat)), degenerate_input_error);

    std::vector<double> ramp;
    for (double m : grid) ramp.push_back(m);
    auto small = curve_from(symmetric_grid(4.0, 7), {0, 1, 2, 3, 4, 5, 6}, {});
    CHECK_THROWS_AS(fit_pref(small), argument_error);

    // one-sided grid
    SweepCurve onesided = curve_from({0, 1, 2, 3, 4, 5, 6, 7, 8}, ramp, {});
    for (size_t i = 0; i < onesided.points.size(); ++i) {
        onesided.points[i].m = static_cast<double>(i);
        onesided.points[i].pref_mean = static_cast<double>(i);
    }
    CHECK_THROWS_AS(fit_pref(onesided), argument_error);
}

TEST_CASE("transfer_eval reuses a frozen fit") {
    PrefFit planted;
    planted.alpha = 1.2;
    planted.beta = -0.5;
    planted.offset = 0.2;
    planted.decay = symmetric_decay(1.0, 5.0, 1.0);
    const auto grid = symmetric_grid(6.0, 33);

    Rng rng(7);
    std::vector<double> train_y, test_y;
    for (double m : grid) train_y.push_back(pref_model_eval(planted, m) + 0.02 * rng.normal());
    Rng rng2(8);
    for (double m : grid) test_y.push_back(pref_model_eval(planted, m) + 0.02 * rng2.normal());

    const SweepCurve train = curve_from(grid, train_y, {});
    const SweepCurve test = curve_from(grid, test_y, {});
    auto [fit, rep] = fit_pref(train);

    // identical curve reproduces the reported R^2 exactly
    CHECK(transfer_eval(fit, rep, train) == rep.r2);
    CHECK(transfer_eval(fit, rep, test) >= 0.95);

    // a conflicting generator transfers badly
    std::vector<double> other_y;
    for (double m : grid) other_y.push_back(-pref_model_eval(planted, m));
    CHECK(transfer_eval(fit, rep, curve_from(grid, other_y, {})) < 0.0);

    // extrapolation is refused unless explicitly allowed
    const auto wide = symmetric_grid(9.0, 33);
    std::vector<double> wide_y;
    for (double m : wide) wide_y.push_back(pref_model_eval(planted, m));
    const SweepCurve wide_curve = curve_from(wide, wide_y, {});
    CHECK_THROWS_AS(transfer_eval(fit, rep, wide_curve), argument_error);
    CHECK(transfer_eval(fit, rep, wide_curve, true) > 0.9);
}

TEST_CASE("fit JSON artifacts round-trip") {
    PrefFit planted;
    planted.alpha = 1.8;
    planted.beta = 0.7;
    planted.offset = 0.4;
    planted.decay = symmetric_decay(1.5, 4.0, 1.2);
    const auto grid = symmetric_grid(6.0, 33);
    std::vector<double> pref_y, util_y;
    UtilFit uplanted;
    uplanted.beta_u = 3.2;
    uplanted.offset_u = -2.5;
    uplanted.decay = planted.decay;
    for (double m : grid) {
        pref_y.push_back(pref_model_eval(planted, m));
        util_y.push_back(util_model_eval(uplanted, m));
    }
    const SweepCurve curve = curve_from(grid, pref_y, util_y);

    auto [pf, prep] = fit_pref(curve);
    json pj = fit_to_json(pf, prep);
    CHECK(pj.at("model") == "pref");
    CHECK(pj.at("n_points") == 33);
    auto [pf2, prep2] = pref_fit_from_json(pj);
    CHECK(pf2.alpha == pf.alpha);
    CHECK(pf2.decay.L_minus == pf.decay.L_minus);
    CHECK(prep2.r2 == prep.r2);
    CHECK(prep2.converged == prep.converged);

    auto [uf, urep] = fit_util(curve);
    json uj = fit_to_json(uf, urep);
    auto [uf2, urep2] = util_fit_from_json(uj);
    CHECK(uf2.beta_u == uf.beta_u);
    CHECK(urep2.continuity_gap == urep.continuity_gap);

    CHECK_THROWS_AS(pref_fit_from_json(uj), parse_error);
    CHECK_THROWS_AS(util_fit_from_json(pj), parse_error);
    json broken = pj;
    broken.erase("params");
    CHECK_THROWS_AS(pref_fit_from_json(broken), parse_error);
}

TEST_CASE("classified linear region surrounds the decay peak of a planted curve") {
    PrefFit planted;
    planted.alpha = 1.0;
    planted.beta = 0.0;
    planted.offset = 0.0;
    planted.decay = symmetric_decay(1.0, 100.0, 2.0);

    const auto grid = symmetric_grid(8.0, 33);
    std::vector<double> ys;
    for (double m : grid) ys.push_back(pref_model_eval(planted, m));
    const SweepCurve curve = curve_from(grid, ys, {});

    const CurveRegions regions = classify_regions(curve, 0.1, 0.01);
    // positive branch is ordered outward from 0; the peak m_+=1 sits at index 3
    // (grid spacing 0.25); everything through m=2 must be labeled linear
    for (size_t i = 0; i < regions.positive.m_values.size(); ++i) {
        const double m = regions.positive.m_values[i];
        if (m >= 0.5 && m <= 2.0) CHECK(regions.positive.labels[i] == RegionLabel::linear);
    }
}
