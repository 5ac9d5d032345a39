#include "seqchess/degeneration.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <stdexcept>

#include "seqchess/parallel.h"

namespace seqchess {

namespace {

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const auto n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double mean_of(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

double density_of(std::span<const std::uint8_t> v) {
    double s = 0.0;
    for (auto x : v) s += x;
    return s / static_cast<double>(v.size());
}

// Nearest-rank quantile with a distribution-free order-statistic interval.
CliffPoint quantile_point(std::vector<double> v, double q) {
    CliffPoint p;
    p.n = v.size();
    std::sort(v.begin(), v.end());
    const double n = static_cast<double>(v.size());
    auto rank = [&](double r) {
        return static_cast<std::size_t>(std::clamp(r, 1.0, n)) - 1;
    };
    p.value = v[rank(std::ceil(q * n))];
    const double z = stats::normal_quantile(0.975);
    const double sd = std::sqrt(n * q * (1 - q));
    p.lo = v[rank(std::floor(n * q - z * sd))];
    p.hi = v[rank(std::ceil(n * q + z * sd) + 1)];
    return p;
}

template <class T>
nlohmann::json or_null(const std::optional<T>& v) {
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

}  // namespace

nlohmann::json DetectorParams::to_json() const {
    return {{"window", window}, {"theta", theta}, {"sustain", sustain}, {"tau", tau}};
}

DetectorParams DetectorParams::from_json(const nlohmann::json& j) {
    DetectorParams p;
    p.window = j.value("window", p.window);
    p.theta = j.value("theta", p.theta);
    p.sustain = j.value("sustain", p.sustain);
    p.tau = j.value("tau", p.tau);
    return p;
}

std::vector<std::uint8_t> blunder_series(std::span<const double> cpls, double tau) {
    if (!(tau > 0)) throw std::invalid_argument("blunder threshold must be positive");
    std::vector<std::uint8_t> out(cpls.size());
    for (std::size_t i = 0; i < cpls.size(); ++i) out[i] = cpls[i] > tau;
    return out;
}

Detection detect_degeneration_point(std::span<const std::uint8_t> series, int window, double theta, int sustain) {
    if (window < 1 || sustain < 1 || !(theta > 0 && theta <= 1))
        throw std::invalid_argument("bad detector parameters");
    Detection d;
    const auto n = static_cast<int>(series.size());
    if (n < window + sustain) {
        d.too_short = true;
        return d;
    }
    const int windows = n - window + 1;
    int sum = 0;
    for (int i = 0; i < window; ++i) sum += series[i];
    // Integer comparison avoids rounding at sum / window == theta.
    const double need = theta * window - 1e-9;
    int run = 0;
    for (int s = 0; s < windows; ++s) {
        if (s > 0) sum += series[s + window - 1] - series[s - 1];
        run = sum >= need ? run + 1 : 0;
        if (run == sustain) {
            d.t_deg = s - sustain + 1;
            return d;
        }
    }
    return d;
}

nlohmann::json DegenerationResult::to_json() const {
    return {{"game_id", game_id},           {"length", length},
            {"too_short", too_short},       {"t_deg", or_null(t_deg)},
            {"u_deg", or_null(u_deg)},      {"pre_density", or_null(pre_density)},
            {"post_density", or_null(post_density)}, {"pre_mean_cpl", or_null(pre_mean_cpl)},
            {"post_mean_cpl", or_null(post_mean_cpl)}};
}

DegenerationResult analyze_game(const GameSeries& game, const DetectorParams& params) {
    DegenerationResult r;
    r.game_id = game.game_id;
    r.length = static_cast<int>(game.cpl.size());
    const auto series = blunder_series(game.cpl, params.tau);
    const auto d = detect_degeneration_point(series, params.window, params.theta, params.sustain);
    r.too_short = d.too_short;
    r.t_deg = d.t_deg;
    if (!r.t_deg) return r;
    const int t = *r.t_deg;
    r.u_deg = static_cast<double>(t + 1) / r.length;
    if (t > 0) {
        r.pre_density = density_of(std::span(series).first(t));
        r.pre_mean_cpl = mean_of(std::span(game.cpl).first(t));
    }
    r.post_density = density_of(std::span(series).subspan(t));
    r.post_mean_cpl = mean_of(std::span(game.cpl).subspan(t));
    return r;
}

std::vector<DegenerationResult> analyze_games(std::span<const GameSeries> games, const DetectorParams& params,
                                              unsigned workers) {
    std::vector<DegenerationResult> out(games.size());
    parallel_for(games.size(), workers, [&](unsigned, std::size_t i) { out[i] = analyze_game(games[i], params); });
    return out;
}

void write_jsonl(std::ostream& out, std::span<const DegenerationResult> results) {
    for (const auto& r : results) out << r.to_json().dump() << '\n';
}

PrePostDelta pre_post_deltas(std::span<const std::uint8_t> series, std::span<const double> cpls, int t_deg) {
    if (series.size() != cpls.size()) throw std::invalid_argument("series and cpl lengths differ");
    if (t_deg <= 0 || t_deg >= static_cast<int>(series.size()))
        throw std::invalid_argument("t_deg must be interior to the game");
    const auto t = static_cast<std::size_t>(t_deg);
    return {density_of(series.subspan(t)) - density_of(series.first(t)),
            mean_of(cpls.subspan(t)) - mean_of(cpls.first(t))};
}

const char* to_string(CliffMetric m) {
    switch (m) {
        case CliffMetric::BlunderProbability: return "blunder_probability";
        case CliffMetric::MeanCpl: return "mean_cpl";
        case CliffMetric::P95Cpl: return "p95_cpl";
    }
    return "?";
}

CliffMetric cliff_metric_from_string(const std::string& s) {
    for (auto m : {CliffMetric::BlunderProbability, CliffMetric::MeanCpl, CliffMetric::P95Cpl})
        if (s == to_string(m)) return m;
    throw std::invalid_argument("unknown cliff metric: " + s);
}

double CliffCurve::pre_mean() const {
    double s = 0, n = 0;
    for (const auto& p : points)
        if (p.step < 0 && p.value) {
            s += *p.value * static_cast<double>(p.n);
            n += static_cast<double>(p.n);
        }
    return n > 0 ? s / n : std::numeric_limits<double>::quiet_NaN();
}

double CliffCurve::post_mean() const {
    double s = 0, n = 0;
    for (const auto& p : points)
        if (p.step >= 0 && p.value) {
            s += *p.value * static_cast<double>(p.n);
            n += static_cast<double>(p.n);
        }
    return n > 0 ? s / n : std::numeric_limits<double>::quiet_NaN();
}

void CliffCurve::write_csv(std::ostream& out) const {
    out << "relative_step,mean,ci_lo,ci_hi,n\n";
    auto cell = [&](const std::optional<double>& v) {
        if (v) out << *v;
    };
    for (const auto& p : points) {
        out << p.step << ',';
        cell(p.value);
        out << ',';
        cell(p.lo);
        out << ',';
        cell(p.hi);
        out << ',' << p.n << '\n';
    }
}

nlohmann::json CliffCurve::to_json() const {
    nlohmann::json pts = nlohmann::json::array();
    for (const auto& p : points)
        pts.push_back({{"step", p.step}, {"n", p.n}, {"mean", or_null(p.value)}, {"ci_lo", or_null(p.lo)},
                       {"ci_hi", or_null(p.hi)}});
    return {{"metric", to_string(metric)}, {"span", span}, {"points", pts}};
}

CliffCurve aligned_cliff(std::span<const GameSeries> games, std::span<const DegenerationResult> results,
                         CliffMetric metric, int span, double tau) {
    if (games.size() != results.size()) throw std::invalid_argument("games and results differ in size");
    if (span < 0) throw std::invalid_argument("negative span");
    std::vector<std::vector<double>> at(static_cast<std::size_t>(2 * span + 1));
    bool any = false;
    for (std::size_t g = 0; g < games.size(); ++g) {
        if (!results[g].t_deg) continue;
        any = true;
        const int t = *results[g].t_deg;
        const auto& cpl = games[g].cpl;
        for (int s = -span; s <= span; ++s) {
            const int ply = t + s;
            if (ply < 0 || ply >= static_cast<int>(cpl.size())) continue;
            at[static_cast<std::size_t>(s + span)].push_back(cpl[static_cast<std::size_t>(ply)]);
        }
    }
    if (!any) throw std::invalid_argument("no game has a degeneration point");

    CliffCurve c;
    c.metric = metric;
    c.span = span;
    for (int s = -span; s <= span; ++s) {
        const auto& v = at[static_cast<std::size_t>(s + span)];
        CliffPoint p;
        if (!v.empty()) {
            switch (metric) {
                case CliffMetric::BlunderProbability: {
                    std::uint64_t k = 0;
                    for (double x : v) k += x > tau;
                    const auto iv = stats::wilson_interval(k, v.size());
                    p.value = static_cast<double>(k) / static_cast<double>(v.size());
                    p.lo = iv.lo;
                    p.hi = iv.hi;
                    break;
                }
                case CliffMetric::MeanCpl: {
                    const auto mi = stats::mean_interval(v);
                    p.value = mi.mean;
                    p.lo = mi.lo;
                    p.hi = mi.hi;
                    break;
                }
                case CliffMetric::P95Cpl: p = quantile_point(v, 0.95); break;
            }
        }
        p.step = s;
        p.n = v.size();
        c.points.push_back(p);
    }
    return c;
}

nlohmann::json DegenerationSummary::to_json() const {
    auto test = [](const stats::TestResult& t) {
        return nlohmann::json{{"n", t.n}, {"statistic", t.statistic}, {"p_value", t.p_value},
                              {"method", stats::to_string(t.method)}};
    };
    return {{"params", params.to_json()},
            {"games", games},
            {"too_short", too_short},
            {"detected", detected},
            {"detection_rate", games ? static_cast<double>(detected) / static_cast<double>(games) : 0.0},
            {"median_t_deg", or_null(median_t_deg)},
            {"median_u_deg", or_null(median_u_deg)},
            {"paired_games", delta_density.size()},
            {"wilcoxon_delta_density", test(wilcoxon_density)},
            {"wilcoxon_delta_cpl", test(wilcoxon_cpl)}};
}

DegenerationSummary summarize(std::span<const DegenerationResult> results, const DetectorParams& params) {
    DegenerationSummary s;
    s.params = params;
    s.games = results.size();
    std::vector<double> t, u;
    for (const auto& r : results) {
        s.too_short += r.too_short;
        if (!r.t_deg) continue;
        ++s.detected;
        t.push_back(*r.t_deg);
        u.push_back(*r.u_deg);
        if (r.pre_density && r.post_density) {
            s.delta_density.push_back(*r.post_density - *r.pre_density);
            s.delta_cpl.push_back(*r.post_mean_cpl - *r.pre_mean_cpl);
        }
    }
    if (!t.empty()) {
        s.median_t_deg = median(t);
        s.median_u_deg = median(u);
    }
    if (!s.delta_density.empty()) {
        s.wilcoxon_density = stats::wilcoxon_signed_rank(s.delta_density);
        s.wilcoxon_cpl = stats::wilcoxon_signed_rank(s.delta_cpl);
    }
    return s;
}

double CoverageDecayModel::horizon() const { return coverage_horizon(n_games, k_crit, branching); }

double coverage_horizon(double n_games, double k_crit, double branching) {
    if (!(branching > 1)) throw std::invalid_argument("branching factor must exceed 1");
    if (!(n_games > 0) || !(k_crit > 0)) throw std::invalid_argument("N and k_crit must be positive");
    return std::log(n_games / k_crit) / std::log(branching);
}

double fit_effective_branching(double n_games, double k_crit, double median_t_deg) {
    if (!(median_t_deg > 0)) throw std::invalid_argument("median t_deg must be positive");
    if (!(k_crit > 0) || !(n_games > k_crit)) throw std::invalid_argument("need N > k_crit > 0");
    return std::exp(std::log(n_games / k_crit) / median_t_deg);
}

std::vector<double> side_cpl_series(Engine& engine, std::span<const chess::Move> moves,
                                    std::optional<chess::Color> side, const SearchLimits& limits) {
    std::vector<double> out;
    auto state = chess::BoardState::initial();
    for (const auto& m : moves) {
        if (!side || state.side_to_move() == *side) out.push_back(cpl(engine, state, m, limits));
        state = chess::apply_move(state, m);
    }
    return out;
}

}  // namespace seqchess
