#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "seqchess/chess.h"
#include "seqchess/engine.h"
#include "seqchess/ingest.h"
#include "seqchess/predictor.h"
#include "seqchess/stats.h"

namespace seqchess {

/// Latest ply whose context (header + moves so far) still leaves room for the
/// predicted token inside a 170-token sequence.
constexpr int kMaxDecisionPly = static_cast<int>(kMaxSequenceLength - kHeaderLength) - 1;

/// Lower edges of the Elo bands; the last band is open-ended.
struct EloBands {
    std::vector<int> edges = {2100, 2300, 2500, 2700};

    /// nullopt below the first edge.
    std::optional<std::size_t> index(int elo) const;
    std::string label(std::size_t i) const;
    std::string label_of(int elo) const;  // "<2100" below the first edge
};

struct DecisionPoint {
    std::string game_id;
    std::size_t game_index = 0;
    int ply = 0;  // moves already played
    std::vector<Token> context;
    chess::Move human;
    chess::Color mover = chess::Color::White;
    int mover_elo = 0;
    std::size_t band = 0;
    chess::Phase phase = chess::Phase::Opening;
    chess::BoardState state;
};

/// Context seen from the mover at `ply`: header with the mover's Elo and color.
std::vector<Token> mover_context(const Vocabulary& vocab, const GameRecord& g, std::size_t ply);

struct SampleConfig {
    std::size_t quota = 1000;  // per band x phase cell
    std::uint64_t seed = 0;
    EloBands bands;
    std::optional<TimeControl> time_control;
};

struct SamplingReport {
    std::vector<DecisionPoint> points;
    std::map<std::string, std::uint64_t> available;  // per cell "band/phase"
    std::map<std::string, std::uint64_t> drawn;
    std::uint64_t requested_per_cell = 0;
    bool underfilled = false;

    nlohmann::json to_json() const;
};

/// Uniform sampling without replacement inside each (band, phase) cell.
/// Underfilled cells keep every candidate and are reported as such.
SamplingReport sample_decision_points(std::span<const GameRecord> games, const SampleConfig& cfg);

struct Proportion {
    std::uint64_t k = 0;
    std::uint64_t n = 0;

    void add(bool hit) {
        ++n;
        k += hit;
    }
    void merge(const Proportion& o) {
        k += o.k;
        n += o.n;
    }
    std::optional<double> value() const;
    stats::Interval ci() const;
    nlohmann::json to_json() const;
};

/// Overall, per-band, per-phase and per-cell proportions. Every add() lands in
/// exactly one cell, so the overall value is the count-weighted cell mean.
struct SlicedReport {
    std::string metric;
    std::vector<std::string> band_order;
    Proportion overall;
    std::map<std::string, Proportion> by_band;
    std::array<Proportion, 3> by_phase{};
    std::map<std::string, Proportion> cells;  // "band/phase"

    explicit SlicedReport(std::string name = {}, const EloBands& bands = {});
    void add(const std::string& band, chess::Phase phase, bool hit);
    void merge(const SlicedReport& o);
    nlohmann::json to_json() const;
    /// One row: Overall, bands, Open. Mid. End.
    std::string to_text() const;
};

enum class QueryMode : std::uint8_t { Argmax, Sample };

struct IllegalRateConfig {
    QueryMode mode = QueryMode::Argmax;
    double temperature = 1.0;
    std::uint64_t seed = 0;
    int workers = 1;
    EloBands bands;
    std::optional<TimeControl> time_control;
};

struct IllegalRateResult {
    SlicedReport report;
    std::uint64_t unavailable = 0;  // predictor failures, excluded
    nlohmann::json to_json() const;
};

/// Queries the predictor at every ply (within the context limit) on the true
/// prefix; an output is illegal iff the decoded move is not legal there.
IllegalRateResult illegal_move_rate(const PredictorFactory& make, std::span<const GameRecord> games,
                                    const IllegalRateConfig& cfg);

struct Top1Result {
    SlicedReport raw;
    SlicedReport masked;  // argmax over legal moves only
    std::uint64_t unavailable = 0;
    nlohmann::json to_json() const;
    std::string to_text() const;
};

Top1Result top1_accuracy(const PredictorFactory& make, std::span<const DecisionPoint> points, const EloBands& bands = {},
                         int workers = 1);

/// Restricts another predictor's distribution to the legal moves of the
/// replayed context and renormalises (uniform over legal moves if no mass).
class LegalMaskPredictor : public Predictor {
public:
    explicit LegalMaskPredictor(std::unique_ptr<Predictor> inner) : inner_(std::move(inner)) {}
    PredictionRecord predict(std::span<const Token> context, const PredictOptions& opt = {}) override;
    std::string name() const override { return inner_->name() + "+mask"; }

private:
    std::unique_ptr<Predictor> inner_;
};

/// Replays the move tokens of a context from the start position.
chess::BoardState replay_context(const Vocabulary& vocab, std::span<const Token> context);

struct AlignmentReport {
    double tau = 100.0;
    std::uint64_t pairs = 0;
    std::uint64_t human_blunders = 0;
    std::uint64_t human_non_blunders = 0;
    std::uint64_t model_on_human_blunder = 0;
    std::uint64_t model_on_human_non_blunder = 0;
    std::optional<double> p_model_given_human;
    std::optional<double> p_model_given_not_human;
    std::optional<double> lift;
    bool lift_infinite = false;
    double human_rate = 0.0;
    double model_rate = 0.0;
    stats::Interval ci_given_human;
    stats::Interval ci_given_not_human;

    nlohmann::json to_json() const;
};

/// A blunder is CPL > tau.
AlignmentReport blunder_alignment(std::span<const double> human, std::span<const double> model, double tau);

struct ProfileCell {
    double lo = 0.0;
    double hi = 0.0;
    std::uint64_t n = 0;
    std::optional<stats::MeanInterval> mean;
};

struct CplProfile {
    std::vector<ProfileCell> cells;
    nlohmann::json to_json() const;
    void write_csv(std::ostream& out) const;
};

inline const std::vector<double>& default_cpl_edges() {
    static const std::vector<double> e = {0, 25, 50, 100, 200, 500, 1000};
    return e;
}

/// Mean model CPL per human-CPL bucket [edge_i, edge_i+1); the last bucket is closed.
CplProfile cpl_profile(std::span<const double> human, std::span<const double> model,
                       std::span<const double> edges = default_cpl_edges());

struct PairedCpl {
    std::vector<double> human;
    std::vector<double> model;
    std::vector<std::size_t> point_index;
    std::uint64_t unavailable = 0;
};

/// Human CPL from the game's annotation when present, else from the engine;
/// model CPL of its legal argmax. Both use the same limits.
PairedCpl paired_cpl(const EngineFactory& engines, const PredictorFactory& predictors,
                     std::span<const DecisionPoint> points, std::span<const GameRecord> games,
                     const SearchLimits& limits, int workers = 1);

/// moves[0, i) followed by moves[j, end). The positions after i and j plies
/// must share a key.
std::vector<chess::Move> strip_repetition_history(std::span<const chess::Move> moves, std::size_t i, std::size_t j);

enum class EvalBucket : std::uint8_t { BigAdvantage, Advantage, Equal, Disadvantage, BigDisadvantage };
const char* to_string(EvalBucket b);
/// >+200, (+50, +200], [-50, +50], [-200, -50), < -200.
EvalBucket eval_bucket(int cp);

struct RepetitionPoint {
    std::size_t game_index = 0;
    std::size_t first_ply = 0;  // i: first occurrence of the key
    std::size_t ply = 0;        // j: the repetition
    Token repeat_move = 0;
    chess::BoardState state;
    std::vector<Token> full_context;
    std::vector<Token> stripped_context;
};

struct RepetitionScan {
    std::vector<RepetitionPoint> points;
    std::uint64_t repeats_seen = 0;
    std::uint64_t no_repeat_move = 0;
    std::uint64_t splices_checked = 0;
    std::uint64_t splice_failures = 0;
};

/// Every ply whose position occurred earlier in the same game (within the
/// context limit) and from which some legal move recreates an earlier key.
/// Each splice is replayed and checked for key equality.
RepetitionScan find_repetition_points(std::span<const GameRecord> games);

struct RepetitionBucket {
    std::uint64_t n = 0;
    std::uint64_t flips = 0;
    std::uint64_t prefer_full = 0;      // argmax is the repetition move
    std::uint64_t prefer_stripped = 0;
    double mass_full = 0.0;             // summed
    double mass_stripped = 0.0;

    void merge(const RepetitionBucket& o);
    nlohmann::json to_json() const;
};

struct RepetitionReport {
    std::array<RepetitionBucket, 5> buckets{};
    RepetitionBucket total;
    std::uint64_t repeats_seen = 0;
    std::uint64_t no_repeat_move = 0;
    std::uint64_t splices_checked = 0;
    std::uint64_t splice_failures = 0;
    std::uint64_t unavailable = 0;
    nlohmann::json to_json() const;
    void write_csv(std::ostream& out) const;
};

/// Without an engine every point lands in the Equal bucket.
RepetitionReport repetition_experiment(std::span<const GameRecord> games, const PredictorFactory& predictors,
                                       const EngineFactory* engines, const SearchLimits& limits, int workers = 1);

/// Default standard-position rule: the key appears within the first
/// `max_ply` plies of at least `min_games` distinct reference games.
class StandardPositionIndex {
public:
    static StandardPositionIndex build(std::span<const GameRecord> reference, int max_ply = 20, int min_games = 2);
    bool is_standard(chess::PositionKey k) const { return keys_.count(k.value) > 0; }
    std::size_t size() const { return keys_.size(); }

private:
    std::unordered_set<std::uint64_t> keys_;
};

}  // namespace seqchess
