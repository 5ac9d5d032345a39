#pragma once

#include <cstdint>
#include <vector>

#include <json.hpp>

#include "seqchess/chess.h"
#include "seqchess/ingest.h"

namespace seqchess {

/// Rating-dependent synthetic games. There are two fixed preference orders
/// over all moves, "book" and "habit"; each picks the first legal move in its
/// order. A player rated e plays the book move with probability skill(e),
/// linear from skill_lo at elo_lo to skill_hi at elo_hi. Otherwise it plays
/// the habit move with probability `habit` and a uniform legal move else, so
/// weak players share a modal move that strong players avoid.
struct SynthConfig {
    std::size_t games = 1000;
    std::uint64_t seed = 0;
    int elo_lo = 1000, elo_hi = 2800;
    // White's rating ~ N(mean, sd) clamped to [lo, hi], so weak players
    // dominate as on a public server; sd <= 0 draws uniformly instead.
    double elo_mean = 1500, elo_sd = 350;
    int elo_gap = 200;  // max rating difference between the two players
    double skill_lo = 0.1, skill_hi = 0.9;
    double habit = 0.8;
    int min_plies = 20, max_plies = 120;
    // Planted per-ply CPL annotations: a step from cpl_p_pre to cpl_p_post
    // blunder rate at a random fraction of the game. Off by default.
    bool annotate_cpl = false;
    double cpl_p_pre = 0.02, cpl_p_post = 0.5;

    nlohmann::json to_json() const;
    static SynthConfig from_json(const nlohmann::json& j);
};

double synth_skill(const SynthConfig& cfg, int elo);
chess::Move book_move(const chess::BoardState& state);
chess::Move habit_move(const chess::BoardState& state);

GameRecord synth_game(const SynthConfig& cfg, std::size_t index);
std::vector<GameRecord> synth_corpus(const SynthConfig& cfg, unsigned workers = 1);

}  // namespace seqchess
