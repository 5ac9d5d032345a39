#include "seqchess/synth.h"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "seqchess/parallel.h"
#include "seqchess/rng.h"

namespace seqchess {

nlohmann::json SynthConfig::to_json() const {
    return {{"games", games},         {"seed", seed},           {"elo_lo", elo_lo},
            {"elo_hi", elo_hi},       {"elo_mean", elo_mean},   {"elo_sd", elo_sd},
            {"elo_gap", elo_gap},     {"skill_lo", skill_lo},
            {"skill_hi", skill_hi},   {"habit", habit},         {"min_plies", min_plies},
            {"max_plies", max_plies}, {"annotate_cpl", annotate_cpl}, {"cpl_p_pre", cpl_p_pre},
            {"cpl_p_post", cpl_p_post}};
}

SynthConfig SynthConfig::from_json(const nlohmann::json& j) {
    SynthConfig c;
    c.games = j.value("games", c.games);
    c.seed = j.value("seed", c.seed);
    c.elo_lo = j.value("elo_lo", c.elo_lo);
    c.elo_hi = j.value("elo_hi", c.elo_hi);
    c.elo_mean = j.value("elo_mean", c.elo_mean);
    c.elo_sd = j.value("elo_sd", c.elo_sd);
    c.elo_gap = j.value("elo_gap", c.elo_gap);
    c.skill_lo = j.value("skill_lo", c.skill_lo);
    c.skill_hi = j.value("skill_hi", c.skill_hi);
    c.habit = j.value("habit", c.habit);
    c.min_plies = j.value("min_plies", c.min_plies);
    c.max_plies = j.value("max_plies", c.max_plies);
    c.annotate_cpl = j.value("annotate_cpl", c.annotate_cpl);
    c.cpl_p_pre = j.value("cpl_p_pre", c.cpl_p_pre);
    c.cpl_p_post = j.value("cpl_p_post", c.cpl_p_post);
    return c;
}

double synth_skill(const SynthConfig& cfg, int elo) {
    if (cfg.elo_hi <= cfg.elo_lo) return cfg.skill_hi;
    const double u = std::clamp(static_cast<double>(elo - cfg.elo_lo) / (cfg.elo_hi - cfg.elo_lo), 0.0, 1.0);
    return cfg.skill_lo + u * (cfg.skill_hi - cfg.skill_lo);
}

namespace {

// Book and habit moves: the legal move first in a fixed global preference
// order, one order per style.
std::pair<chess::Move, chess::Move> ranked_pair(const std::vector<chess::Move>& legal) {
    if (legal.empty()) throw std::invalid_argument("no legal moves");
    std::uint64_t h1 = ~0ULL, h2 = ~0ULL;
    chess::Move first = legal.front(), second = legal.front();
    for (const auto& m : legal) {
        const auto u = m.uci();
        const auto a = derive_seed(0xb00cULL, u), b = derive_seed(0x4ab1ULL, u);
        if (a < h1) h1 = a, first = m;
        if (b < h2) h2 = b, second = m;
    }
    return {first, second};
}

}  // namespace

chess::Move book_move(const chess::BoardState& state) { return ranked_pair(chess::legal_moves(state)).first; }

chess::Move habit_move(const chess::BoardState& state) { return ranked_pair(chess::legal_moves(state)).second; }

GameRecord synth_game(const SynthConfig& cfg, std::size_t index) {
    if (cfg.min_plies < 1 || cfg.max_plies < cfg.min_plies || cfg.elo_hi < cfg.elo_lo)
        throw std::invalid_argument("bad synthetic corpus config");
    Rng rng(derive_seed(cfg.seed, "synth", index));
    GameRecord g;
    g.id = "synth-" + std::to_string(index);
    g.source = "synthetic";
    const int span = cfg.elo_hi - cfg.elo_lo;
    if (cfg.elo_sd > 0) {
        const double e = std::round(cfg.elo_mean + cfg.elo_sd * rng.normal());
        g.white_elo = static_cast<int>(std::clamp(e, static_cast<double>(cfg.elo_lo), static_cast<double>(cfg.elo_hi)));
    } else {
        g.white_elo = cfg.elo_lo + static_cast<int>(rng.below(static_cast<std::uint64_t>(span) + 1));
    }
    const int gap = static_cast<int>(rng.below(2 * static_cast<std::uint64_t>(cfg.elo_gap) + 1)) - cfg.elo_gap;
    g.black_elo = std::clamp(g.white_elo + gap, cfg.elo_lo, cfg.elo_hi);
    g.time_control = rng.below(2) ? TimeControl::Bullet : TimeControl::Blitz;
    const int length = cfg.min_plies + static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.max_plies - cfg.min_plies) + 1));

    auto state = chess::BoardState::initial();
    std::vector<chess::PositionKey> history{state.key()};
    auto term = chess::Termination::None;
    while (static_cast<int>(g.moves.size()) < length) {
        const auto legal = chess::legal_moves(state);
        const int elo = state.side_to_move() == chess::Color::White ? g.white_elo : g.black_elo;
        const auto [book, habit] = ranked_pair(legal);
        chess::Move m;
        if (rng.uniform() < synth_skill(cfg, elo))
            m = book;
        else if (rng.uniform() < cfg.habit)
            m = habit;
        else
            m = legal[rng.below(legal.size())];
        state = chess::apply_move(state, m);
        g.moves.push_back(m);
        history.push_back(state.key());
        term = chess::adjudicate(state, history);
        if (term != chess::Termination::None) break;
    }
    if (term == chess::Termination::Checkmate) {
        g.result = state.side_to_move() == chess::Color::White ? GameResult::BlackWin : GameResult::WhiteWin;
    } else if (term != chess::Termination::None) {
        g.result = GameResult::Draw;
    } else {
        // Unfinished: decide by rating, as a resignation would.
        const double pw = 1.0 / (1.0 + std::pow(10.0, (g.black_elo - g.white_elo) / 400.0));
        const double u = rng.uniform();
        g.result = u < 0.1 ? GameResult::Draw : rng.uniform() < pw ? GameResult::WhiteWin : GameResult::BlackWin;
    }
    if (cfg.annotate_cpl) {
        const auto n = g.moves.size();
        const auto step = static_cast<std::size_t>((0.4 + 0.4 * rng.uniform()) * static_cast<double>(n));
        for (std::size_t i = 0; i < n; ++i) {
            const bool blunder = rng.uniform() < (i < step ? cfg.cpl_p_pre : cfg.cpl_p_post);
            g.cpl.push_back(std::round(blunder ? 501 + 499 * rng.uniform() : 60 * rng.uniform()));
        }
    }
    return g;
}

std::vector<GameRecord> synth_corpus(const SynthConfig& cfg, unsigned workers) {
    std::vector<GameRecord> out(cfg.games);
    parallel_for(cfg.games, workers, [&](unsigned, std::size_t i) { out[i] = synth_game(cfg, i); });
    return out;
}

}  // namespace seqchess
