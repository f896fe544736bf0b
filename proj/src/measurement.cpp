#include "steerlab/measurement.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "steerlab/errors.hpp"
#include "steerlab/numerics.hpp"
#include "steerlab/serialize.hpp"
#include "steerlab/util.hpp"

namespace steerlab {

double pref_odds(const LossPair& lp) { return lp.ln - lp.lp; }

UtilOddsResult util_odds(const LossPair& lp, double mass_cap) {
    if (!(mass_cap > 0.0 && mass_cap < 1.0))
        throw argument_error("util_odds: mass_cap must lie in (0, 1)");
    UtilOddsResult r;
    const double log_s = logsumexp({-lp.lp, -lp.ln});
    if (log_s >= std::log(mass_cap)) {
        r.clamped = true;
        r.value = std::log(mass_cap) - std::log1p(-mass_cap);
        return r;
    }
    const double s = std::exp(log_s);
    r.value = log_s - std::log1p(-s);
    return r;
}

namespace {
std::vector<size_t> answer_positions(size_t query_len, size_t answer_len) {
    std::vector<size_t> p(answer_len);
    for (size_t i = 0; i < answer_len; ++i) p[i] = query_len + i;
    return p;
}
}  // namespace

LossPair measure_pair(const LanguageModel& model, const SiteId& site, const Intervention& iv,
                      double m, const PolarityExample& ex, const MeasureConfig& cfg) {
    if (ex.pos_answer.empty() || ex.neg_answer.empty())
        throw argument_error("measure_pair: answers must be nonempty");
    LossPair out;
    out.normalized = cfg.length_normalize;
    for (int side = 0; side < 2; ++side) {
        const auto& answer = side == 0 ? ex.pos_answer : ex.neg_answer;
        Hook h{site, &iv, SteerScale(m), HookMode::activation, {}};
        if (cfg.answer_positions_only)
            h.positions = answer_positions(ex.query.size(), answer.size());
        const double nll = sequence_nll(model, ex.query, answer, {h}, cfg.length_normalize);
        (side == 0 ? out.lp : out.ln) = nll;
    }
    return out;
}

std::vector<double> symmetric_grid(double extent, size_t points) {
    if (points < 3 || points % 2 == 0)
        throw argument_error("symmetric_grid: need an odd point count of at least 3");
    if (!(extent > 0.0)) throw argument_error("symmetric_grid: extent must be positive");
    std::vector<double> g(points);
    const size_t half = points / 2;
    for (size_t i = 0; i < points; ++i) {
        // integer arithmetic around the midpoint keeps the grid exactly
        // symmetric and puts an exact 0.0 at the center
        const double k = static_cast<double>(static_cast<long>(i) - static_cast<long>(half));
        g[i] = extent * k / static_cast<double>(half);
    }
    return g;
}

SweepCurve sweep(const LanguageModel& model, const SiteId& site, const Intervention& iv,
                 const std::vector<PolarityExample>& examples, std::vector<double> m_grid,
                 const MeasureConfig& cfg) {
    if (examples.empty()) throw argument_error("sweep: empty example set");
    if (m_grid.empty()) throw argument_error("sweep: empty grid");
    std::sort(m_grid.begin(), m_grid.end());
    for (size_t i = 0; i + 1 < m_grid.size(); ++i)
        if (m_grid[i] == m_grid[i + 1]) throw argument_error("sweep: duplicate grid value");
    if (std::find(m_grid.begin(), m_grid.end(), 0.0) == m_grid.end())
        throw argument_error("sweep: grid must contain m=0");

    SweepCurve curve;
    curve.m_grid = m_grid;
    curve.points.resize(m_grid.size());

    const size_t n_ex = examples.size();
    struct Cell {
        double pref, util;
        bool clamped;
    };
    std::vector<Cell> cells(m_grid.size() * n_ex);
    parallel_for(cells.size(), [&](size_t c) {
        const size_t mi = c / n_ex;
        const size_t ei = c % n_ex;
        const LossPair lp = measure_pair(model, site, iv, m_grid[mi], examples[ei], cfg);
        const UtilOddsResult u = util_odds(lp, cfg.mass_cap);
        cells[c] = Cell{pref_odds(lp), u.value, u.clamped};
    });

    for (size_t mi = 0; mi < m_grid.size(); ++mi) {
        SweepPoint& pt = curve.points[mi];
        pt.m = m_grid[mi];
        pt.n = n_ex;
        size_t clamped = 0;
        for (size_t ei = 0; ei < n_ex; ++ei) {
            const Cell& c = cells[mi * n_ex + ei];
            pt.pref_raw.push_back(c.pref);
            pt.util_raw.push_back(c.util);
            if (c.clamped) ++clamped;
        }
        auto mean_of = [](const std::vector<double>& xs) {
            double s = 0.0;
            for (double x : xs) s += x;
            return s / static_cast<double>(xs.size());
        };
        auto std_of = [](const std::vector<double>& xs, double mean) {
            double s = 0.0;
            for (double x : xs) s += (x - mean) * (x - mean);
            return std::sqrt(s / static_cast<double>(xs.size()));
        };
        pt.pref_mean = mean_of(pt.pref_raw);
        pt.util_mean = mean_of(pt.util_raw);
        pt.pref_std = std_of(pt.pref_raw, pt.pref_mean);
        pt.util_std = std_of(pt.util_raw, pt.util_mean);
        pt.clamped_frac = static_cast<double>(clamped) / static_cast<double>(n_ex);
    }
    return curve;
}

static const char* kSweepHeader = "m,pref_odds_mean,util_odds_mean,pref_odds_std,util_odds_std,n,clamped_frac";

std::string sweep_to_csv(const SweepCurve& curve) {
    std::ostringstream ss;
    ss << kSweepHeader << "\n";
    for (const SweepPoint& p : curve.points) {
        ss << format_double(p.m) << "," << format_double(p.pref_mean) << ","
           << format_double(p.util_mean) << "," << format_double(p.pref_std) << ","
           << format_double(p.util_std) << "," << p.n << "," << format_double(p.clamped_frac)
           << "\n";
    }
    return ss.str();
}

SweepCurve sweep_from_csv(const std::string& text) {
    std::istringstream ss(text);
    std::string line;
    size_t line_no = 0;
    // '#' lines carry provenance metadata (config hash, seed) and are
    // ignored by the parser.
    do {
        if (!std::getline(ss, line)) throw parse_error("sweep CSV: bad or missing header");
        ++line_no;
    } while (!line.empty() && line[0] == '#');
    if (line != kSweepHeader) throw parse_error("sweep CSV: bad or missing header");
    SweepCurve curve;
    while (std::getline(ss, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        std::vector<std::string> fields;
        std::istringstream ls(line);
        std::string f;
        while (std::getline(ls, f, ',')) fields.push_back(f);
        if (fields.size() != 7)
            throw parse_error("sweep CSV line " + std::to_string(line_no) + ": expected 7 fields");
        auto num = [&](size_t i) {
            char* end = nullptr;
            const double v = std::strtod(fields[i].c_str(), &end);
            if (end == fields[i].c_str() || *end != '\0')
                throw parse_error("sweep CSV line " + std::to_string(line_no) +
                                  ": bad number in field " + std::to_string(i + 1));
            return v;
        };
        SweepPoint p;
        p.m = num(0);
        p.pref_mean = num(1);
        p.util_mean = num(2);
        p.pref_std = num(3);
        p.util_std = num(4);
        p.n = static_cast<size_t>(num(5));
        p.clamped_frac = num(6);
        curve.m_grid.push_back(p.m);
        curve.points.push_back(std::move(p));
    }
    for (size_t i = 0; i + 1 < curve.m_grid.size(); ++i)
        if (!(curve.m_grid[i] < curve.m_grid[i + 1]))
            throw parse_error("sweep CSV: grid is not strictly increasing");
    return curve;
}

void save_sweep_csv(const SweepCurve& curve, const std::string& path) {
    atomic_write_file(path, sweep_to_csv(curve));
}

SweepCurve load_sweep_csv(const std::string& path) { return sweep_from_csv(read_file(path)); }

void save_sweep_raw_jsonl(const SweepCurve& curve, const std::string& path) {
    std::ostringstream ss;
    for (const SweepPoint& p : curve.points) {
        for (size_t ei = 0; ei < p.pref_raw.size(); ++ei) {
            json j{{"m", p.m},
                   {"example", ei},
                   {"pref_odds", p.pref_raw[ei]},
                   {"util_odds", p.util_raw[ei]}};
            ss << j.dump() << "\n";
        }
    }
    atomic_write_file(path, ss.str());
}

namespace {
BranchRegions classify_branch(const std::vector<double>& m, const std::vector<double>& y,
                              double slope_tol, double flat_tol) {
    // m is ordered outward from the origin (|m| increasing), y parallel.
    const size_t n = m.size();
    BranchRegions br;
    br.m_values = m;
    br.labels.assign(n, RegionLabel::transitional);
    std::vector<double> slope(n - 1);
    for (size_t i = 0; i + 1 < n; ++i) slope[i] = (y[i + 1] - y[i]) / (m[i + 1] - m[i]);

    // Convergence: maximal outer run of near-zero slope.  A point belongs to
    // the region when every slope beyond it is flat.
    size_t conv_begin = n;  // first point index inside the convergence region
    {
        size_t s = slope.size();
        while (s > 0 && std::fabs(slope[s - 1]) <= flat_tol) --s;
        if (s < slope.size()) conv_begin = s;  // slopes s..end are flat => points s..n-1
        if (s == 0) conv_begin = 0;            // entire branch is flat
    }
    // Linear: maximal inner run whose slopes stay near the innermost slope,
    // stopping at the convergence region.
    size_t linear_end = 0;  // one past the last point inside the linear region
    if (conv_begin > 0 && !slope.empty()) {
        const double s0 = slope[0];
        size_t k = 0;
        const size_t slope_limit = std::min(conv_begin == n ? slope.size() : conv_begin,
                                            slope.size());
        while (k < slope_limit &&
               std::fabs(slope[k] - s0) <= slope_tol * std::max(1.0, std::fabs(s0)))
            ++k;
        if (k > 0) linear_end = k + 1;  // k slopes cover k+1 points
    }
    for (size_t i = 0; i < n; ++i) {
        if (i >= conv_begin)
            br.labels[i] = RegionLabel::convergence;
        else if (i < linear_end)
            br.labels[i] = RegionLabel::linear;
    }
    return br;
}
}  // namespace

CurveRegions classify_regions(const SweepCurve& curve, double slope_tol, double flat_tol) {
    std::vector<double> m_pos, y_pos, m_neg, y_neg;
    for (size_t i = 0; i < curve.m_grid.size(); ++i) {
        const double m = curve.m_grid[i];
        const double y = curve.points[i].pref_mean;
        if (m >= 0.0) {
            m_pos.push_back(m);
            y_pos.push_back(y);
        }
        if (m <= 0.0) {
            m_neg.push_back(m);
            y_neg.push_back(y);
        }
    }
    if (m_pos.size() < 7 || m_neg.size() < 7)
        throw argument_error("classify_regions: need at least 7 grid points per sign of m");
    // negative branch walks outward from 0, i.e. reversed
    std::reverse(m_neg.begin(), m_neg.end());
    std::reverse(y_neg.begin(), y_neg.end());
    CurveRegions r;
    r.positive = classify_branch(m_pos, y_pos, slope_tol, flat_tol);
    r.negative = classify_branch(m_neg, y_neg, slope_tol, flat_tol);
    return r;
}

}  // namespace steerlab
