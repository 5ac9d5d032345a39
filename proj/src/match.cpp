#include "seqchess/match.h"

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "seqchess/parallel.h"
#include "seqchess/rng.h"

namespace seqchess {

namespace {

bool has_legal_mass(const PredictionRecord& rec, std::span<const Token> legal) {
    for (const auto& [t, p] : rec.distribution)
        if (p > 0 && std::binary_search(legal.begin(), legal.end(), t)) return true;
    return false;
}

std::string fmt(double x, int digits) {
    std::ostringstream s;
    s.setf(std::ios::fixed);
    s.precision(digits);
    s << x;
    return s.str();
}

}  // namespace

OpeningBook OpeningBook::build(std::span<const GameRecord> games, int plies) {
    if (plies < 1) throw std::invalid_argument("opening prefix must have at least one ply");
    std::map<std::string, std::pair<std::vector<chess::Move>, std::uint64_t>> by_text;
    for (const auto& g : games) {
        if (static_cast<int>(g.moves.size()) < plies) continue;
        std::vector<chess::Move> line(g.moves.begin(), g.moves.begin() + plies);
        std::string key;
        for (const auto& m : line) key += m.uci() + ' ';
        auto& e = by_text[key];
        e.first = std::move(line);
        ++e.second;
    }
    if (by_text.empty()) throw std::invalid_argument("no game is long enough for the opening book");
    OpeningBook b;
    b.plies_ = plies;
    for (auto& [k, e] : by_text) {
        b.total_ += e.second;
        b.lines_.push_back(std::move(e));
    }
    return b;
}

std::vector<chess::Move> OpeningBook::sample(Rng& rng) const {
    auto r = rng.below(total_);
    for (const auto& [line, n] : lines_) {
        if (r < n) return line;
        r -= n;
    }
    return lines_.back().first;
}

void MatchConfig::validate() const {
    if (games < 1) throw std::invalid_argument("a match needs at least one game");
    if (max_plies < 2) throw std::invalid_argument("max plies must be at least 2");
    if (!(temperature_a >= 0) || !(temperature_b >= 0)) throw std::invalid_argument("temperature must be >= 0");
    if (!a || !b) throw std::invalid_argument("match needs two predictor factories");
    if (max_attempts < 1) throw std::invalid_argument("max attempts must be at least 1");
}

nlohmann::json MatchConfig::to_json() const {
    return {{"a", a_name},
            {"b", b_name},
            {"games", games},
            {"temperature_a", temperature_a},
            {"temperature_b", temperature_b},
            {"elo_a", elo_a},
            {"elo_b", elo_b},
            {"time_control", seqchess::to_string(time_control)},
            {"opening", book ? "book-" + std::to_string(book->plies()) + "-ply" : std::string("start")},
            {"max_plies", max_plies},
            {"seed", seed},
            {"alternate_colors", alternate_colors},
            {"max_attempts", max_attempts}};
}

int MatchGame::a_outcome() const {
    switch (record.result) {
        case GameResult::WhiteWin: return a_white ? 1 : -1;
        case GameResult::BlackWin: return a_white ? -1 : 1;
        default: return 0;
    }
}

MatchGame play_game(const MatchConfig& cfg, std::size_t index, Predictor& a, Predictor& b, unsigned attempt) {
    const auto& vocab = standard_vocabulary();
    MatchGame g;
    g.index = index;
    g.a_white = !cfg.alternate_colors || index % 2 == 0;
    g.record.id = "match-" + std::to_string(index);
    g.record.source = "selfplay";
    g.record.time_control = cfg.time_control;
    g.record.white_elo = g.a_white ? cfg.elo_a : cfg.elo_b;
    g.record.black_elo = g.a_white ? cfg.elo_b : cfg.elo_a;

    Rng rng(attempt == 0 ? derive_seed(cfg.seed, "game", index)
                         : derive_seed(derive_seed(cfg.seed, "retry", attempt), "game", index));
    auto state = chess::BoardState::initial();
    std::vector<chess::PositionKey> history{state.key()};
    auto& moves = g.record.moves;
    if (cfg.book) {
        // Colour-swapped pairs share an opening.
        Rng orng(derive_seed(cfg.seed, "opening", cfg.alternate_colors ? index / 2 : index));
        for (const auto& m : cfg.book->sample(orng)) {
            state = chess::apply_move(state, m);
            moves.push_back(m);
            history.push_back(state.key());
        }
        g.opening_plies = static_cast<int>(moves.size());
    }

    g.termination = chess::adjudicate(state, history);
    while (g.termination == chess::Termination::None) {
        if (static_cast<int>(moves.size()) >= cfg.max_plies) {
            g.termination = chess::Termination::MaxPlies;
            break;
        }
        const auto side = state.side_to_move();
        const bool a_to_move = (side == chess::Color::White) == g.a_white;
        Predictor& p = a_to_move ? a : b;
        SequenceHeader h{cfg.time_control, a_to_move ? cfg.elo_a : cfg.elo_b, side};
        const auto ctx = encode(vocab, moves, h).tokens;
        auto rec = p.predict(ctx);
        const auto legal = legal_tokens(vocab, state);
        if (!has_legal_mass(rec, legal)) {
            // Count the raw attempt, then fall back to uniform over legal moves.
            (a_to_move ? g.raw_illegal_a : g.raw_illegal_b) += 1;
            rec.distribution.clear();
            for (auto t : legal) rec.distribution.emplace_back(t, 1.0 / static_cast<double>(legal.size()));
        }
        const auto s = sample_move(rec, a_to_move ? cfg.temperature_a : cfg.temperature_b, rng, legal, true);
        if (s.raw_illegal) (a_to_move ? g.raw_illegal_a : g.raw_illegal_b) += 1;
        const auto m = vocab.move_of(s.token);
        state = chess::apply_move(state, m);
        moves.push_back(m);
        history.push_back(state.key());
        g.termination = chess::adjudicate(state, history);
    }
    if (g.termination == chess::Termination::Checkmate)
        g.record.result = state.side_to_move() == chess::Color::White ? GameResult::BlackWin : GameResult::WhiteWin;
    else
        g.record.result = GameResult::Draw;
    return g;
}

MatchGame play_game(const MatchConfig& cfg, std::size_t index) {
    cfg.validate();
    auto a = cfg.a();
    auto b = cfg.b();
    return play_game(cfg, index, *a, *b);
}

double MatchResult::score() const {
    const auto n = played();
    return n ? (static_cast<double>(wins) + 0.5 * static_cast<double>(draws)) / static_cast<double>(n) : 0.5;
}

stats::Interval MatchResult::score_ci() const {
    // Normal interval on per-game points in {0, 0.5, 1}.
    std::vector<double> pts;
    pts.insert(pts.end(), wins, 1.0);
    pts.insert(pts.end(), losses, 0.0);
    pts.insert(pts.end(), draws, 0.5);
    if (pts.size() < 2) return {0.0, 1.0};
    const auto mi = stats::mean_interval(pts);
    return {std::max(0.0, mi.lo), std::min(1.0, mi.hi)};
}

std::string MatchResult::wld() const {
    return std::to_string(wins) + "-" + std::to_string(losses) + "-" + std::to_string(draws);
}

std::string MatchResult::ratio_cell() const {
    return "(" + std::to_string(wins) + ":" + std::to_string(losses) + ")";
}

nlohmann::json MatchResult::to_json() const {
    const auto ci = score_ci();
    return {{"config", config},
            {"games", played()},
            {"wins", wins},
            {"losses", losses},
            {"draws", draws},
            {"w_l_d", wld()},
            {"decisive", decisive()},
            {"score", score()},
            {"score_ci", {ci.lo, ci.hi}},
            {"p_value", test.p_value},
            {"test", stats::to_string(test.method)},
            {"ratio", ratio_cell()},
            {"voided_games", voided_games},
            {"voided_attempts", voided_attempts}};
}

void MatchResult::write_pgn(std::ostream& out) const {
    const std::string a = config.value("a", "A"), b = config.value("b", "B");
    for (const auto& g : games) {
        std::map<std::string, std::string> tags{{"White", g.a_white ? a : b},
                                                {"Black", g.a_white ? b : a},
                                                {"Termination", chess::to_string(g.termination)},
                                                {"Round", std::to_string(g.index + 1)},
                                                {"RawIllegalWhite", std::to_string(g.a_white ? g.raw_illegal_a : g.raw_illegal_b)},
                                                {"RawIllegalBlack", std::to_string(g.a_white ? g.raw_illegal_b : g.raw_illegal_a)}};
        seqchess::write_pgn(out, g.record, tags);
    }
}

MatchResult tally(std::uint64_t wins, std::uint64_t losses, std::uint64_t draws) {
    MatchResult r;
    r.wins = wins;
    r.losses = losses;
    r.draws = draws;
    if (r.decisive() > 0) r.test = stats::binomial_two_sided(wins, r.decisive(), 0.5);
    return r;
}

MatchResult run_match(const MatchConfig& cfg) {
    cfg.validate();
    const auto n = static_cast<std::size_t>(cfg.games);
    std::vector<std::optional<MatchGame>> played(n);
    std::vector<int> voids(n, 0);
    struct Seat {
        std::unique_ptr<Predictor> a, b;
    };
    std::vector<Seat> seats(std::max(1u, cfg.workers));
    parallel_for(n, cfg.workers, [&](unsigned w, std::size_t i) {
        auto& seat = seats[w];
        for (int attempt = 0; attempt < cfg.max_attempts; ++attempt) {
            try {
                if (!seat.a) seat.a = cfg.a();
                if (!seat.b) seat.b = cfg.b();
                played[i] = play_game(cfg, i, *seat.a, *seat.b, static_cast<unsigned>(attempt));
                played[i]->voided_attempts = voids[i];
                return;
            } catch (const PredictorError&) {
                ++voids[i];
                seat = Seat{};
            }
        }
    });

    std::uint64_t w = 0, l = 0, d = 0, void_games = 0, void_attempts = 0;
    std::vector<MatchGame> games;
    for (std::size_t i = 0; i < n; ++i) {
        void_attempts += static_cast<std::uint64_t>(voids[i]);
        if (!played[i]) {
            ++void_games;
            continue;
        }
        const int o = played[i]->a_outcome();
        (o > 0 ? w : o < 0 ? l : d) += 1;
        games.push_back(std::move(*played[i]));
    }
    if (games.empty()) throw std::runtime_error("every game of the match was voided");
    auto r = tally(w, l, d);
    r.voided_games = void_games;
    r.voided_attempts = void_attempts;
    r.games = std::move(games);
    r.config = cfg.to_json();
    return r;
}

nlohmann::json TemperatureSweep::to_json() const {
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t i = 0; i < temperatures.size(); ++i) {
        auto j = results[i].to_json();
        j["temperature"] = temperatures[i];
        rows.push_back(std::move(j));
    }
    return {{"rows", rows}};
}

std::string TemperatureSweep::to_text() const {
    std::ostringstream s;
    s << "Temp.  W    L    D    Score\n";
    for (std::size_t i = 0; i < temperatures.size(); ++i) {
        const auto& r = results[i];
        s << fmt(temperatures[i], 1);
        for (auto v : {r.wins, r.losses, r.draws}) {
            const auto t = std::to_string(v);
            s << std::string(t.size() < 5 ? 5 - t.size() : 1, ' ') << t;
        }
        s << "    " << fmt(100.0 * r.score(), 1) << "%\n";
    }
    return s.str();
}

TemperatureSweep temperature_sweep(const MatchConfig& cfg, std::span<const double> temperatures) {
    TemperatureSweep out;
    for (double t : temperatures) {
        if (!(t >= 0)) throw std::invalid_argument("temperature must be >= 0");
        auto c = cfg;
        c.temperature_a = c.temperature_b = t;
        out.temperatures.push_back(t);
        out.results.push_back(run_match(c));
    }
    return out;
}

MatchResult elo_conditioning_match(const PredictorFactory& predictor, int elo_high, int elo_low, int games,
                                   double temperature, std::uint64_t seed, unsigned workers, const OpeningBook* book) {
    MatchConfig c;
    c.a = c.b = predictor;
    c.a_name = "elo-" + std::to_string(elo_high);
    c.b_name = "elo-" + std::to_string(elo_low);
    c.elo_a = elo_high;
    c.elo_b = elo_low;
    c.games = games;
    c.temperature_a = c.temperature_b = temperature;
    c.seed = seed;
    c.workers = workers;
    c.book = book;
    return run_match(c);
}

}  // namespace seqchess
