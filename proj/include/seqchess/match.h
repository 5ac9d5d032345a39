#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "seqchess/chess.h"
#include "seqchess/ingest.h"
#include "seqchess/predictor.h"
#include "seqchess/stats.h"

namespace seqchess {

/// Frequency-weighted opening prefixes taken from a corpus.
class OpeningBook {
public:
    /// Games shorter than `plies` are ignored. Throws if none qualify.
    static OpeningBook build(std::span<const GameRecord> games, int plies = 4);

    std::vector<chess::Move> sample(Rng& rng) const;
    std::size_t size() const { return lines_.size(); }
    int plies() const { return plies_; }

private:
    int plies_ = 0;
    std::uint64_t total_ = 0;
    std::vector<std::pair<std::vector<chess::Move>, std::uint64_t>> lines_;  // sorted by move text
};

struct MatchConfig {
    PredictorFactory a, b;
    std::string a_name = "A", b_name = "B";
    int games = 100;
    double temperature_a = 1.0, temperature_b = 1.0;
    int elo_a = 2500, elo_b = 2500;  // header rating each side is conditioned on
    TimeControl time_control = TimeControl::Blitz;
    const OpeningBook* book = nullptr;  // null: standard start position
    int max_plies = 300;
    std::uint64_t seed = 0;
    bool alternate_colors = true;
    unsigned workers = 1;
    int max_attempts = 3;  // per game, before it is voided for good

    void validate() const;
    nlohmann::json to_json() const;
};

struct MatchGame {
    std::size_t index = 0;
    GameRecord record;
    chess::Termination termination = chess::Termination::None;
    bool a_white = true;
    int opening_plies = 0;
    int raw_illegal_a = 0, raw_illegal_b = 0;
    int voided_attempts = 0;

    /// +1 A won, -1 A lost, 0 draw.
    int a_outcome() const;
};

/// Plays one game with the given predictors. Throws PredictorError if a
/// session fails; run_match handles voiding and replay.
MatchGame play_game(const MatchConfig& cfg, std::size_t index, Predictor& a, Predictor& b, unsigned attempt = 0);
/// Builds fresh predictors from the config's factories.
MatchGame play_game(const MatchConfig& cfg, std::size_t index);

struct MatchResult {
    std::uint64_t wins = 0, losses = 0, draws = 0;
    std::uint64_t voided_games = 0, voided_attempts = 0;
    stats::TestResult test;
    std::vector<MatchGame> games;
    nlohmann::json config;

    std::uint64_t played() const { return wins + losses + draws; }
    std::uint64_t decisive() const { return wins + losses; }
    double score() const;
    double p_value() const { return test.p_value; }
    stats::Interval score_ci() const;
    std::string wld() const;
    std::string ratio_cell() const;  // "(27:13)"

    nlohmann::json to_json() const;
    void write_pgn(std::ostream& out) const;
};

/// W/L/D counts with the exact two-sided binomial test on decisive games.
MatchResult tally(std::uint64_t wins, std::uint64_t losses, std::uint64_t draws);

/// Throws if every game is voided.
MatchResult run_match(const MatchConfig& cfg);

struct TemperatureSweep {
    std::vector<double> temperatures;
    std::vector<MatchResult> results;

    nlohmann::json to_json() const;
    std::string to_text() const;
};

/// Same seeds in every cell; both sides sample at the cell's temperature.
TemperatureSweep temperature_sweep(const MatchConfig& cfg, std::span<const double> temperatures);

/// The predictor plays itself, conditioned on elo_high as A and elo_low as B.
MatchResult elo_conditioning_match(const PredictorFactory& predictor, int elo_high, int elo_low, int games,
                                   double temperature, std::uint64_t seed, unsigned workers = 1,
                                   const OpeningBook* book = nullptr);

}  // namespace seqchess
