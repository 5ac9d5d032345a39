#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "seqchess/chess.h"
#include "seqchess/engine.h"
#include "seqchess/stats.h"

namespace seqchess {

inline constexpr double kCatastrophicCpl = 500.0;

struct DetectorParams {
    int window = 5;
    double theta = 0.3;
    int sustain = 3;
    double tau = kCatastrophicCpl;

    nlohmann::json to_json() const;
    static DetectorParams from_json(const nlohmann::json& j);
};

/// 1 where CPL > tau. Throws if tau <= 0.
std::vector<std::uint8_t> blunder_series(std::span<const double> cpls, double tau);

struct Detection {
    std::optional<int> t_deg;
    bool too_short = false;
};

/// Slides a width-W window over the series; t_deg is the first ply of the
/// first of S consecutive windows whose rate is at least theta.
Detection detect_degeneration_point(std::span<const std::uint8_t> series, int window, double theta, int sustain);

struct GameSeries {
    std::string game_id;
    std::vector<double> cpl;  // analysed side, one per own move
};

struct DegenerationResult {
    std::string game_id;
    int length = 0;
    bool too_short = false;
    std::optional<int> t_deg;
    std::optional<double> u_deg;  // (t_deg + 1) / length
    std::optional<double> pre_density, post_density;
    std::optional<double> pre_mean_cpl, post_mean_cpl;

    nlohmann::json to_json() const;
};

DegenerationResult analyze_game(const GameSeries& game, const DetectorParams& params);
std::vector<DegenerationResult> analyze_games(std::span<const GameSeries> games, const DetectorParams& params,
                                              unsigned workers = 1);
void write_jsonl(std::ostream& out, std::span<const DegenerationResult> results);

struct PrePostDelta {
    double blunder_density = 0.0;
    double mean_cpl = 0.0;
};

/// Post segment [t_deg, end) minus pre segment [0, t_deg). Throws unless
/// 0 < t_deg < length.
PrePostDelta pre_post_deltas(std::span<const std::uint8_t> series, std::span<const double> cpls, int t_deg);

enum class CliffMetric { BlunderProbability, MeanCpl, P95Cpl };
const char* to_string(CliffMetric m);
CliffMetric cliff_metric_from_string(const std::string& s);

struct CliffPoint {
    int step = 0;
    std::uint64_t n = 0;
    std::optional<double> value, lo, hi;
};

struct CliffCurve {
    CliffMetric metric = CliffMetric::BlunderProbability;
    int span = 20;
    std::vector<CliffPoint> points;  // steps -span..span

    const CliffPoint& at(int step) const { return points.at(static_cast<std::size_t>(step + span)); }
    // Count-weighted means over steps < 0 and >= 0.
    double pre_mean() const;
    double post_mean() const;
    void write_csv(std::ostream& out) const;
    nlohmann::json to_json() const;
};

/// Throws if no game has a t_deg.
CliffCurve aligned_cliff(std::span<const GameSeries> games, std::span<const DegenerationResult> results,
                         CliffMetric metric, int span = 20, double tau = kCatastrophicCpl);

struct DegenerationSummary {
    DetectorParams params;
    std::uint64_t games = 0, too_short = 0, detected = 0;
    std::optional<double> median_t_deg, median_u_deg;
    std::vector<double> delta_density, delta_cpl;
    stats::TestResult wilcoxon_density, wilcoxon_cpl;

    nlohmann::json to_json() const;
};

DegenerationSummary summarize(std::span<const DegenerationResult> results, const DetectorParams& params);

struct CoverageDecayModel {
    double n_games = 0.0;
    double k_crit = 1.0;
    double branching = 2.0;
    double horizon() const;
};

/// log(N / k_crit) / log b. Throws if b <= 1 or N, k_crit <= 0.
double coverage_horizon(double n_games, double k_crit, double branching);

/// (N / k_crit)^(1 / median). Throws unless median > 0 and N > k_crit > 0.
double fit_effective_branching(double n_games, double k_crit, double median_t_deg);

/// CPL of each move played by `side` (both sides if empty), in order.
std::vector<double> side_cpl_series(Engine& engine, std::span<const chess::Move> moves,
                                    std::optional<chess::Color> side, const SearchLimits& limits);

}  // namespace seqchess
