// Shared generators and stub predictors for the test binaries.
#pragma once

#include <algorithm>
#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "seqchess/degeneration.h"
#include "seqchess/evaluation.h"
#include "seqchess/predictor.h"
#include "seqchess/probes.h"
#include "seqchess/rng.h"

namespace fixtures {

using namespace seqchess;

inline std::vector<chess::Move> context_moves(std::span<const Token> ctx) {
    const auto& v = standard_vocabulary();
    std::vector<chess::Move> ms;
    for (Token t : ctx)
        if (v.is_move(t)) ms.push_back(v.move_of(t));
    return ms;
}

inline std::uint64_t context_hash(std::span<const Token> ctx, std::uint64_t salt) {
    std::uint64_t h = salt;
    for (Token t : ctx) h = derive_seed(h, "tok", t);
    return h;
}

inline GameRecord random_game(std::mt19937_64& rng, int plies, int white_elo, int black_elo, const std::string& id = "g") {
    GameRecord g;
    g.id = id;
    g.white_elo = white_elo;
    g.black_elo = black_elo;
    g.time_control = TimeControl::Bullet;
    auto s = chess::BoardState::initial();
    for (int p = 0; p < plies; ++p) {
        const auto ms = chess::legal_moves(s);
        if (ms.empty()) break;
        g.moves.push_back(ms[rng() % ms.size()]);
        s = s.after(g.moves.back());
    }
    return g;
}

inline std::vector<GameRecord> random_games(int n, int plies, std::uint64_t seed, int elo_lo = 2000, int elo_span = 900) {
    std::mt19937_64 rng(seed);
    std::vector<GameRecord> out;
    for (int i = 0; i < n; ++i) {
        const int w = elo_lo + static_cast<int>(rng() % elo_span);
        const int b = elo_lo + static_cast<int>(rng() % elo_span);
        out.push_back(random_game(rng, plies, w, b, "g" + std::to_string(i)));
    }
    return out;
}

// Random play with out-and-back cycles: both sides move a piece and return it.
inline GameRecord cycle_game(std::mt19937_64& rng, int plies, int cycles, const std::string& id = "c") {
    GameRecord g;
    g.id = id;
    g.white_elo = 1500 + static_cast<int>(rng() % 1000);
    g.black_elo = 1500 + static_cast<int>(rng() % 1000);
    g.time_control = TimeControl::Bullet;
    auto s = chess::BoardState::initial();
    int done = 0;
    while (static_cast<int>(g.moves.size()) < plies) {
        if (done < cycles && g.moves.size() % 2 == 0 && rng() % 4 == 0) {
            // Try a quiet knight out-and-back for both sides.
            auto quiet = [&](const chess::BoardState& b) {
                std::vector<chess::Move> out;
                for (const auto& m : chess::legal_moves(b))
                    if (chess::kind_of(b.at(m.from)) == chess::PieceKind::Knight && b.at(m.to) == chess::Piece::Empty)
                        out.push_back(m);
                return out;
            };
            const auto w = quiet(s);
            if (!w.empty()) {
                const auto m1 = w[rng() % w.size()];
                const auto s1 = s.after(m1);
                const auto b = quiet(s1);
                if (!b.empty()) {
                    const auto m2 = b[rng() % b.size()];
                    const auto s2 = s1.after(m2);
                    const chess::Move r1{m1.to, m1.from, std::nullopt}, r2{m2.to, m2.from, std::nullopt};
                    if (chess::is_legal(s2, r1)) {
                        const auto s3 = s2.after(r1);
                        if (chess::is_legal(s3, r2) && s3.after(r2).key() == s.key()) {
                            for (const auto& m : {m1, m2, r1, r2}) g.moves.push_back(m);
                            s = s3.after(r2);
                            ++done;
                            continue;
                        }
                    }
                }
            }
        }
        const auto ms = chess::legal_moves(s);
        if (ms.empty()) break;
        g.moves.push_back(ms[rng() % ms.size()]);
        s = s.after(g.moves.back());
    }
    return g;
}

// Distinct pseudo-random probabilities over the legal moves, fixed per context.
class RandomLegalPredictor : public Predictor {
public:
    explicit RandomLegalPredictor(std::uint64_t salt = 1) : salt_(salt) {}
    PredictionRecord predict(std::span<const Token> ctx, const PredictOptions& = {}) override {
        const auto legal = legal_tokens(standard_vocabulary(), chess::replay(context_moves(ctx)).final_state);
        Rng rng(context_hash(ctx, salt_));
        std::vector<double> w;
        double total = 0;
        for (std::size_t i = 0; i < legal.size(); ++i) total += w.emplace_back(rng.uniform() + 1e-6);
        PredictionRecord r;
        for (std::size_t i = 0; i < legal.size(); ++i) r.distribution.emplace_back(legal[i], w[i] / total);
        return r;
    }
    std::string name() const override { return "random-legal"; }

private:
    std::uint64_t salt_;
};

// With probability q puts all mass on a move token that is geometric but not
// legal in the position; otherwise behaves like RandomLegalPredictor.
class PlantedIllegalPredictor : public Predictor {
public:
    PlantedIllegalPredictor(double q, std::uint64_t salt) : q_(q), salt_(salt), inner_(salt) {}
    PredictionRecord predict(std::span<const Token> ctx, const PredictOptions& opt = {}) override {
        Rng rng(context_hash(ctx, salt_ ^ 0x5bd1e995ULL));
        if (rng.uniform() >= q_) return inner_.predict(ctx, opt);
        const auto& v = standard_vocabulary();
        const auto legal = legal_tokens(v, chess::replay(context_moves(ctx)).final_state);
        Token t = v.first_move_token();
        for (;; ++t)
            if (!std::binary_search(legal.begin(), legal.end(), t)) break;
        PredictionRecord r;
        for (Token u = v.first_move_token(); u < v.size(); ++u) r.distribution.emplace_back(u, u == t ? 1.0 : 0.0);
        return r;
    }
    std::string name() const override { return "planted-illegal"; }

private:
    double q_;
    std::uint64_t salt_;
    RandomLegalPredictor inner_;
};

// Depends only on the current position: history cannot change its output.
class PositionOnlyPredictor : public Predictor {
public:
    PredictionRecord predict(std::span<const Token> ctx, const PredictOptions& = {}) override {
        const auto s = chess::replay(context_moves(ctx)).final_state;
        const auto legal = legal_tokens(standard_vocabulary(), s);
        Rng rng(s.key().value);
        std::vector<double> w;
        double total = 0;
        for (std::size_t i = 0; i < legal.size(); ++i) total += w.emplace_back(rng.uniform() + 1e-6);
        PredictionRecord r;
        for (std::size_t i = 0; i < legal.size(); ++i) r.distribution.emplace_back(legal[i], w[i] / total);
        return r;
    }
    std::string name() const override { return "position-only"; }
};

// Prefers the lowest legal token when the current position already occurred
// in the move history, the second lowest otherwise.
class RepetitionAwarePredictor : public Predictor {
public:
    PredictionRecord predict(std::span<const Token> ctx, const PredictOptions& = {}) override {
        const auto moves = context_moves(ctx);
        const auto rp = chess::replay(moves);
        const auto now = rp.final_state.key();
        bool seen = chess::BoardState::initial().key() == now && !moves.empty();
        for (std::size_t i = 0; i + 1 < rp.keys.size(); ++i) seen = seen || rp.keys[i] == now;
        const auto legal = legal_tokens(standard_vocabulary(), rp.final_state);
        PredictionRecord r;
        for (std::size_t i = 0; i < legal.size(); ++i) {
            const bool fav = legal.size() == 1 || i == (seen ? 0u : 1u);
            r.distribution.emplace_back(legal[i], fav ? 0.6 : 0.4 / static_cast<double>(legal.size() - 1));
        }
        double total = 0;
        for (const auto& e : r.distribution) total += e.second;
        for (auto& e : r.distribution) e.second /= total;
        return r;
    }
    std::string name() const override { return "repetition-aware"; }
};

// Per-ply CPL for one side: blunders (CPL in (500, 1000]) at rate p_pre
// before ply `step` and p_post from it on; other moves cost [0, 60).
inline GameSeries step_series(Rng& rng, int length, int step, double p_pre, double p_post, const std::string& id = "s") {
    GameSeries g;
    g.game_id = id;
    for (int t = 0; t < length; ++t) {
        const bool blunder = rng.uniform() < (t < step ? p_pre : p_post);
        g.cpl.push_back(blunder ? 500.5 + 499.5 * rng.uniform() : 60.0 * rng.uniform());
    }
    return g;
}

// Seven numbers per square: +-e_kind by colour, e_6 for empty, plus noise.
inline std::vector<float> board_code(const BoardLabels& labels, Rng& rng, double sigma) {
    std::vector<float> v(64 * 7, 0.0f);
    for (std::size_t s = 0; s < 64; ++s) {
        const int l = labels[s];
        if (l == 0)
            v[s * 7 + 6] = 1.0f;
        else
            v[s * 7 + static_cast<std::size_t>((l - 1) % 6)] = l <= 6 ? 1.0f : -1.0f;
    }
    if (sigma > 0)
        for (auto& x : v) x += static_cast<float>(sigma * rng.normal());
    return v;
}

inline std::vector<float> noise_vector(Rng& rng, int dim) {
    std::vector<float> v(static_cast<std::size_t>(dim));
    for (auto& x : v) x = static_cast<float>(rng.normal());
    return v;
}

// Positions reached by random play, one per game at a random ply.
inline std::vector<chess::BoardState> random_positions(std::size_t n, std::uint64_t seed) {
    std::vector<chess::BoardState> out;
    Rng rng(seed);
    const auto games = random_games(static_cast<int>(n), 90, seed);
    for (const auto& g : games) {
        const auto cut = rng.below(g.moves.size() + 1);
        out.push_back(chess::replay(std::span(g.moves).first(cut)).final_state);
    }
    return out;
}

// Hidden layers 0..4; the board is linearly readable only from layer 3 on.
class LayeredPredictor : public Predictor {
public:
    PredictionRecord predict(std::span<const Token> ctx, const PredictOptions& opt = {}) override {
        const auto state = chess::replay(context_moves(ctx)).final_state;
        PredictionRecord r;
        const auto legal = legal_tokens(standard_vocabulary(), state);
        for (auto t : legal) r.distribution.emplace_back(t, 1.0 / static_cast<double>(legal.size()));
        if (opt.want_hidden) {
            Rng rng(context_hash(ctx, 99));
            const auto labels = board_labels(state);
            for (int l = 0; l < 5; ++l)
                r.hidden.push_back({l, l >= 3 ? board_code(labels, rng, 0.1) : noise_vector(rng, 64 * 7)});
        }
        return r;
    }
    std::string name() const override { return "layered"; }
};

template <class P, class... Args>
PredictorFactory factory(Args... args) {
    return [=] { return std::unique_ptr<Predictor>(new P(args...)); };
}

}  // namespace fixtures
