#include "seqchess/weighting.h"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

namespace seqchess {

using nlohmann::json;

const char* to_string(SchemeKind k) {
    switch (k) {
        case SchemeKind::Uniform: return "uniform";
        case SchemeKind::Linear: return "linear";
        case SchemeKind::Exponential: return "exponential";
    }
    return "uniform";
}

WeightScheme WeightScheme::uniform() { return WeightScheme{}; }

WeightScheme WeightScheme::linear(double w_min, double e_min, double e_max) {
    if (!(e_max > e_min)) throw std::invalid_argument("linear scheme needs e_max > e_min");
    if (!(w_min > 0.0 && w_min <= 1.0)) throw std::invalid_argument("linear scheme needs w_min in (0, 1]");
    WeightScheme s;
    s.kind = SchemeKind::Linear;
    s.e_min = e_min;
    s.e_max = e_max;
    s.w_min = w_min;
    s.slope_per_elo = 1.0 / (e_max - e_min);
    return s;
}

WeightScheme WeightScheme::exponential(double r, double e_min, double e_max) {
    if (!(e_max > e_min)) throw std::invalid_argument("exponential scheme needs e_max > e_min");
    if (!(r >= 1.0)) throw std::invalid_argument("exponential scheme needs intensity >= 1");
    WeightScheme s;
    s.kind = SchemeKind::Exponential;
    s.e_min = e_min;
    s.e_max = e_max;
    s.e_ref = e_max;
    s.beta_per_elo = std::log(r) / (e_max - e_min);
    return s;
}

json WeightScheme::to_json() const {
    json j{{"kind", to_string(kind)}, {"e_min", e_min}, {"e_max", e_max}};
    if (kind == SchemeKind::Linear) {
        j["slope_per_elo"] = slope_per_elo;
        j["w_min"] = w_min;
    } else if (kind == SchemeKind::Exponential) {
        j["beta_per_elo"] = beta_per_elo;
        j["e_ref"] = e_ref;
    }
    return j;
}

WeightScheme WeightScheme::from_json(const json& j) {
    WeightScheme s;
    const auto kind = j.at("kind").get<std::string>();
    s.e_min = j.value("e_min", s.e_min);
    s.e_max = j.value("e_max", s.e_max);
    if (kind == "uniform") {
        s.kind = SchemeKind::Uniform;
    } else if (kind == "linear") {
        s = linear(j.value("w_min", 0.05), s.e_min, s.e_max);
        s.slope_per_elo = j.value("slope_per_elo", s.slope_per_elo);
    } else if (kind == "exponential") {
        s.kind = SchemeKind::Exponential;
        s.beta_per_elo = j.at("beta_per_elo").get<double>();
        s.e_ref = j.value("e_ref", s.e_max);
    } else {
        throw std::invalid_argument("unknown weighting scheme '" + kind + "'");
    }
    return s;
}

double weight(const WeightScheme& s, double elo) {
    const double e = std::clamp(elo, s.e_min, s.e_max);
    switch (s.kind) {
        case SchemeKind::Uniform: return 1.0;
        case SchemeKind::Linear: return std::clamp(s.slope_per_elo * (e - s.e_min), s.w_min, 1.0);
        case SchemeKind::Exponential:
            // exp(beta (e - e_ref)) rescaled so that w(e_max) = 1.
            return std::exp(s.beta_per_elo * (e - s.e_ref)) / std::exp(s.beta_per_elo * (s.e_max - s.e_ref));
    }
    return 1.0;
}

double intensity(const WeightScheme& s) { return weight(s, s.e_max) / weight(s, s.e_min); }

namespace {

bool has_elo(const GameRecord& g) { return g.white_elo > 0 && g.black_elo > 0; }

}  // namespace

SequenceWeights sequence_weights(std::span<const GameRecord> games, const WeightScheme& s) {
    SequenceWeights out;
    out.weights.reserve(games.size() * 2);
    for (const auto& g : games) {
        if (!has_elo(g)) {
            ++out.skipped_missing_elo;
            continue;
        }
        const double w = weight(s, g.average_elo());
        out.weights.push_back(w);
        out.weights.push_back(w);
    }
    return out;
}

double gradient_share(std::span<const GameRecord> games, const WeightScheme& s, double elo_threshold) {
    double high = 0.0, total = 0.0;
    for (const auto& g : games) {
        if (!has_elo(g)) continue;
        const double w = weight(s, g.average_elo());
        total += w;
        if (g.average_elo() >= elo_threshold) high += w;
    }
    if (total <= 0.0) throw std::invalid_argument("gradient_share on an empty corpus");
    return high / total;
}

std::uint64_t effective_diversity(std::span<const GameRecord> games, double theta, const std::optional<WeightScheme>& scheme) {
    if (!(theta > 0.0)) throw std::invalid_argument("effective_diversity needs theta > 0");
    std::unordered_map<std::uint64_t, double> exposure;
    for (const auto& g : games) {
        const double w = scheme ? weight(*scheme, g.average_elo()) : 1.0;
        chess::BoardState s = chess::BoardState::initial();
        for (const auto& m : g.moves) {
            s = s.after(m);
            exposure[s.key().value] += w;
        }
    }
    std::uint64_t count = 0;
    // Small slack so that theta-many identical float weights still qualify.
    for (const auto& [k, v] : exposure)
        if (v >= theta * (1.0 - 1e-12)) ++count;
    return count;
}

double effective_quality(const DatasetMetrics& m, const WeightScheme& s) {
    double num = 0.0, den = 0.0;
    for (const auto& [bucket, n] : m.n_e) {
        auto q = m.q_e.find(bucket);
        if (q == m.q_e.end()) throw std::invalid_argument("quality map lacks bucket " + std::to_string(bucket));
        const double w = weight(s, bucket);
        num += w * n * q->second;
        den += w * n;
    }
    if (den <= 0.0) throw std::invalid_argument("effective_quality: zero total weight");
    return num / den;
}

std::map<int, double> bucket_counts(std::span<const GameRecord> games) {
    std::map<int, double> out;
    for (const auto& g : games) out[elo_bucket(static_cast<int>(g.average_elo()))] += 2.0;
    return out;
}

double CapabilityModel::tracking(double r) const { return T0 - alpha_T * std::log(r); }
double CapabilityModel::decision(double r) const { return Q0 + beta_Q * std::log(r); }

namespace {

struct LineFit {
    double intercept;
    double slope;
    std::vector<double> residuals;
};

LineFit fit_line(std::span<const CapabilityObservation> obs, const char* what) {
    if (obs.size() < 2) throw std::invalid_argument(std::string(what) + ": need at least two observations");
    double sx = 0, sy = 0;
    for (const auto& o : obs) {
        if (!(o.r > 0.0)) throw std::invalid_argument(std::string(what) + ": intensities must be positive");
        sx += std::log(o.r);
        sy += o.value;
    }
    const double n = static_cast<double>(obs.size());
    const double mx = sx / n, my = sy / n;
    double sxx = 0, sxy = 0;
    for (const auto& o : obs) {
        const double dx = std::log(o.r) - mx;
        sxx += dx * dx;
        sxy += dx * (o.value - my);
    }
    if (sxx <= 1e-300) throw std::invalid_argument(std::string(what) + ": degenerate design, all r equal");
    LineFit f{0, sxy / sxx, {}};
    f.intercept = my - f.slope * mx;
    for (const auto& o : obs) f.residuals.push_back(o.value - (f.intercept + f.slope * std::log(o.r)));
    return f;
}

}  // namespace

CapabilityFit fit_capability_lines(std::span<const CapabilityObservation> tracking,
                                   std::span<const CapabilityObservation> decision) {
    const LineFit t = fit_line(tracking, "tracking fit");
    const LineFit q = fit_line(decision, "decision fit");
    CapabilityFit out;
    out.model = CapabilityModel{t.intercept, q.intercept, -t.slope, q.slope};
    out.residuals_T = t.residuals;
    out.residuals_Q = q.residuals;
    out.signs_consistent = out.model.alpha_T >= 0.0 && out.model.beta_Q >= 0.0;
    return out;
}

Crossover crossover_intensity(const CapabilityModel& m) {
    const double denom = m.alpha_T + m.beta_Q;
    if (!(std::abs(denom) > 0.0)) throw std::invalid_argument("crossover undefined: capability lines are parallel");
    return Crossover{std::exp((m.T0 - m.Q0) / denom), m.T0 <= m.Q0};
}

void write_weights_file(std::ostream& out, std::span<const double> weights) {
    for (double w : weights) out << std::setprecision(9) << w << '\n';
}

std::vector<double> read_weights_file(std::istream& in) {
    std::vector<double> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::size_t used = 0;
        const double w = std::stod(line, &used);
        if (used != line.size() && line.find_first_not_of(" \t\r", used) != std::string::npos)
            throw std::invalid_argument("bad weight line '" + line + "'");
        out.push_back(w);
    }
    return out;
}

json capability_report(const CapabilityFit& fit, const std::string& tracking_metric, const std::string& decision_metric) {
    const auto& m = fit.model;
    json j{{"tracking_metric", tracking_metric},
           {"decision_metric", decision_metric},
           {"T0", m.T0},
           {"Q0", m.Q0},
           {"alpha_T", m.alpha_T},
           {"beta_Q", m.beta_Q},
           {"residuals_T", fit.residuals_T},
           {"residuals_Q", fit.residuals_Q},
           {"signs_consistent", fit.signs_consistent}};
    if (std::abs(m.alpha_T + m.beta_Q) > 0.0) {
        const auto c = crossover_intensity(m);
        j["r_star"] = c.r_star;
        j["tracking_limited_at_unit"] = c.tracking_limited_at_unit;
    } else {
        j["r_star"] = nullptr;
    }
    return j;
}

}  // namespace seqchess
