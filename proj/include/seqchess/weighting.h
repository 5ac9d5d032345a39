#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "seqchess/ingest.h"

namespace seqchess {

enum class SchemeKind : std::uint8_t { Uniform, Linear, Exponential };
const char* to_string(SchemeKind k);

/// Elo-to-weight map. Elo is clamped to [e_min, e_max] before evaluation and
/// every weight lies in (0, 1].
struct WeightScheme {
    SchemeKind kind = SchemeKind::Uniform;
    double e_min = 1000.0;
    double e_max = 2800.0;
    double slope_per_elo = 0.0;  // linear
    double w_min = 1.0;          // linear floor
    double beta_per_elo = 0.0;   // exponential
    double e_ref = 2800.0;       // exponential reference; normalisation makes it cosmetic

    static WeightScheme uniform();
    /// Slope chosen so w(e_max) = 1; intensity is 1 / w_min.
    static WeightScheme linear(double w_min = 0.05, double e_min = 1000.0, double e_max = 2800.0);
    /// beta = ln(intensity) / (e_max - e_min).
    static WeightScheme exponential(double intensity = 200.0, double e_min = 1000.0, double e_max = 2800.0);

    nlohmann::json to_json() const;
    static WeightScheme from_json(const nlohmann::json& j);
};

double weight(const WeightScheme& s, double elo);
double intensity(const WeightScheme& s);

struct SequenceWeights {
    std::vector<double> weights;  // two per game (white, black), token-file order
    std::uint64_t skipped_missing_elo = 0;
};

/// Weights from the average of the two players' Elos, aligned with the token
/// file. Games with a zero Elo on either side are skipped and counted.
SequenceWeights sequence_weights(std::span<const GameRecord> games, const WeightScheme& s);

/// Weighted mass of sequences whose average Elo is >= threshold.
double gradient_share(std::span<const GameRecord> games, const WeightScheme& s, double elo_threshold);

/// Distinct positions (after each ply) whose summed exposure reaches theta.
/// With `scheme` each occurrence counts w(average Elo), otherwise 1.
std::uint64_t effective_diversity(std::span<const GameRecord> games, double theta,
                                  const std::optional<WeightScheme>& scheme = std::nullopt);

struct DatasetMetrics {
    std::uint64_t div = 0;
    double qual = 0.0;
    double theta = 1.0;
    std::map<int, double> n_e;  // sequences per Elo bucket
    std::map<int, double> q_e;  // quality per bucket, inverse-CPL scale
};

/// sum w(e) n_e q(e) / sum w(e) n_e over buckets.
double effective_quality(const DatasetMetrics& m, const WeightScheme& s);

/// Per-bucket sequence counts keyed by the bucket of the average Elo.
std::map<int, double> bucket_counts(std::span<const GameRecord> games);

struct CapabilityModel {
    double T0 = 0.0;
    double Q0 = 0.0;
    double alpha_T = 0.0;  // T(r) = T0 - alpha_T ln r
    double beta_Q = 0.0;   // Q(r) = Q0 + beta_Q ln r

    double tracking(double r) const;
    double decision(double r) const;
};

struct CapabilityObservation {
    double r;
    double value;
};

struct CapabilityFit {
    CapabilityModel model;
    std::vector<double> residuals_T;
    std::vector<double> residuals_Q;
    /// False when a fitted sensitivity came out negative.
    bool signs_consistent = true;
};

/// Least squares in (ln r, value) space, separately for each capability.
CapabilityFit fit_capability_lines(std::span<const CapabilityObservation> tracking,
                                   std::span<const CapabilityObservation> decision);

struct Crossover {
    double r_star = 1.0;
    bool tracking_limited_at_unit = false;  // T0 <= Q0
};

/// Intensity where the two lines meet: exp((T0 - Q0) / (alpha_T + beta_Q)).
Crossover crossover_intensity(const CapabilityModel& m);

/// One float per line, aligned with token-file records.
void write_weights_file(std::ostream& out, std::span<const double> weights);
std::vector<double> read_weights_file(std::istream& in);

/// Capability fit report; the metric names are recorded because the fit is scale dependent.
nlohmann::json capability_report(const CapabilityFit& fit, const std::string& tracking_metric,
                                 const std::string& decision_metric);

inline double bottleneck(double tracking, double decision) { return tracking < decision ? tracking : decision; }

}  // namespace seqchess
