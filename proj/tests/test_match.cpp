#include <doctest.h>

#include <atomic>
#include <cmath>
#include <sstream>

#include "fixtures.h"
#include "seqchess/engine.h"
#include "seqchess/match.h"

using namespace seqchess;
using namespace fixtures;

namespace {

// Plays a fixed move list by ply.
class ScriptedPredictor : public Predictor {
public:
    explicit ScriptedPredictor(std::vector<std::string> line) : line_(std::move(line)) {}
    PredictionRecord predict(std::span<const Token> ctx, const PredictOptions& = {}) override {
        const auto ply = ctx.size() - kHeaderLength;
        PredictionRecord r;
        r.distribution = {{*standard_vocabulary().move_token(chess::parse_uci_move(line_.at(ply % line_.size()))), 1.0}};
        return r;
    }
    std::string name() const override { return "scripted"; }

private:
    std::vector<std::string> line_;
};

// Same favourite move; the rest of the mass is spread out or piled on one move.
class TailPredictor : public Predictor {
public:
    explicit TailPredictor(bool spread) : spread_(spread) {}
    PredictionRecord predict(std::span<const Token> ctx, const PredictOptions& = {}) override {
        const auto state = chess::replay(context_moves(ctx)).final_state;
        const auto legal = legal_tokens(standard_vocabulary(), state);
        const auto n = legal.size();
        const auto fav = context_hash(ctx, 5) % n;
        PredictionRecord r;
        for (std::size_t i = 0; i < n; ++i) {
            double p = i == fav ? 0.6 : 0.0;
            if (n > 1 && i != fav) p = spread_ ? 0.4 / static_cast<double>(n - 1) : (i == (fav + 1) % n ? 0.4 : 0.0);
            if (n == 1) p = 1.0;
            if (p > 0) r.distribution.emplace_back(legal[i], p);
        }
        return r;
    }
    std::string name() const override { return spread_ ? "tail-spread" : "tail-narrow"; }

private:
    bool spread_;
};

// Engine-best when conditioned on 2000+, uniform legal otherwise.
class ConditionedPredictor : public Predictor {
public:
    PredictionRecord predict(std::span<const Token> ctx, const PredictOptions& = {}) override {
        const auto& v = standard_vocabulary();
        const auto elo = v.elo_of(ctx[2]);
        const auto state = chess::replay(context_moves(ctx)).final_state;
        const auto legal = legal_tokens(v, state);
        PredictionRecord r;
        if (elo && *elo >= 2000) {
            const auto best = engine_.evaluate(state, SearchLimits{2, {}, {}}).best;
            r.distribution = {{*v.move_token(best), 1.0}};
        } else {
            for (auto t : legal) r.distribution.emplace_back(t, 1.0 / static_cast<double>(legal.size()));
        }
        return r;
    }
    std::string name() const override { return "conditioned"; }

private:
    MaterialEngine engine_;
};

std::atomic<int> flaky_failures{0};

class FlakyPredictor : public RandomLegalPredictor {
public:
    FlakyPredictor() : RandomLegalPredictor(1) {}
    PredictionRecord predict(std::span<const Token> ctx, const PredictOptions& o = {}) override {
        if (ctx.size() == kHeaderLength + 10 && flaky_failures.fetch_add(1) < 2) throw PredictorError("session lost");
        return RandomLegalPredictor::predict(ctx, o);
    }
};

class DeadPredictor : public Predictor {
public:
    PredictionRecord predict(std::span<const Token>, const PredictOptions& = {}) override {
        throw PredictorError("dead");
    }
    std::string name() const override { return "dead"; }
};

// Exact two-sided binomial p-value at 1/2 by summing small probabilities.
double binom_p(int k, int n) {
    std::vector<double> pr(static_cast<std::size_t>(n + 1));
    for (int i = 0; i <= n; ++i)
        pr[static_cast<std::size_t>(i)] = std::exp(std::lgamma(n + 1.0) - std::lgamma(i + 1.0) - std::lgamma(n - i + 1.0) - n * std::log(2.0));
    double p = 0;
    for (double x : pr)
        if (x <= pr[static_cast<std::size_t>(k)] * (1 + 1e-9)) p += x;
    return std::min(1.0, p);
}

MatchConfig base(PredictorFactory a, PredictorFactory b, int games) {
    MatchConfig c;
    c.a = std::move(a);
    c.b = std::move(b);
    c.games = games;
    return c;
}

}  // namespace

TEST_CASE("table p-values") {
    struct Row {
        int w, l, d;
        double p;
    };
    for (const auto& r : {Row{80, 54, 66, 0.030}, Row{40, 23, 37, 0.043}, Row{41, 24, 35, 0.046}}) {
        const auto t = tally(static_cast<std::uint64_t>(r.w), static_cast<std::uint64_t>(r.l), static_cast<std::uint64_t>(r.d));
        CHECK(std::abs(t.p_value() - r.p) <= 0.005);
        CHECK(t.p_value() == doctest::Approx(binom_p(r.w, r.w + r.l)).epsilon(1e-9));
        CHECK(t.played() == static_cast<std::uint64_t>(r.w + r.l + r.d));
    }
    const auto big = tally(66, 8, 26);
    CHECK(big.p_value() < 0.001);
    CHECK(big.wld() == "66-8-26");
    CHECK(big.score() == doctest::Approx((66 + 13) / 100.0));
    CHECK(tally(27, 13, 0).ratio_cell() == "(27:13)");
    CHECK(tally(0, 0, 5).p_value() == 1.0);
}

TEST_CASE("scripted games") {
    auto c = base(factory<ScriptedPredictor>(std::vector<std::string>{"f2f3", "e7e5", "g2g4", "d8h4"}),
                  factory<ScriptedPredictor>(std::vector<std::string>{"f2f3", "e7e5", "g2g4", "d8h4"}), 1);
    const auto fool = play_game(c, 0);
    CHECK(fool.record.moves.size() == 4);
    CHECK(fool.termination == chess::Termination::Checkmate);
    CHECK(fool.record.result == GameResult::BlackWin);
    CHECK(fool.a_outcome() == -1);

    const std::vector<std::string> loop = {"g1f3", "g8f6", "f3g1", "f6g8"};
    c.a = c.b = factory<ScriptedPredictor>(loop);
    const auto rep = play_game(c, 0);
    CHECK(rep.termination == chess::Termination::ThreefoldRepetition);
    CHECK(rep.record.moves.size() == 8);
    CHECK(rep.record.result == GameResult::Draw);

    c.a = c.b = factory<RandomLegalPredictor>(std::uint64_t{3});
    c.max_plies = 10;
    const auto capped = play_game(c, 0);
    CHECK(capped.termination == chess::Termination::MaxPlies);
    CHECK(capped.record.moves.size() == 10);
    c.max_plies = 1;
    CHECK_THROWS(play_game(c, 0));
    c.max_plies = 300;
    c.games = 0;
    CHECK_THROWS(run_match(c));
}

TEST_CASE("determinism and conservation") {
    auto c = base(factory<RandomLegalPredictor>(std::uint64_t{1}), factory<RandomLegalPredictor>(std::uint64_t{2}), 24);
    c.temperature_a = c.temperature_b = 1.0;
    c.seed = 42;
    const auto one = run_match(c);
    c.workers = 4;
    const auto four = run_match(c);
    CHECK(one.to_json() == four.to_json());
    std::ostringstream p1, p4;
    one.write_pgn(p1);
    four.write_pgn(p4);
    CHECK(p1.str() == p4.str());
    CHECK(p1.str().find("[Termination \"") != std::string::npos);
    CHECK(one.played() == 24);
    CHECK(one.wins + one.losses + one.draws == 24);

    // Deterministic predictors at t = 0 repeat the same game per colour.
    c.temperature_a = c.temperature_b = 0.0;
    c.b = c.a;
    const auto det = run_match(c);
    for (const auto& g : det.games)
        CHECK(g.record.moves == det.games[g.index % 2].record.moves);
    c.alternate_colors = false;
    const auto same = run_match(c);
    const auto o = same.games[0].a_outcome();
    for (const auto& g : same.games) CHECK(g.a_outcome() == o);
    CHECK((same.wins == 24 || same.losses == 24 || same.draws == 24));
}

TEST_CASE("colour fairness") {
    auto c = base(factory<RandomLegalPredictor>(std::uint64_t{7}), factory<RandomLegalPredictor>(std::uint64_t{7}), 200);
    c.seed = 3;
    c.max_plies = 200;
    const auto r = run_match(c);
    const auto ci = r.score_ci();
    MESSAGE("self-play " << r.wld() << " score " << r.score());
    CHECK(ci.lo <= 0.5);
    CHECK(0.5 <= ci.hi);
}

TEST_CASE("voided games are replayed") {
    flaky_failures = 0;
    auto c = base(factory<FlakyPredictor>(), factory<RandomLegalPredictor>(std::uint64_t{2}), 6);
    const auto r = run_match(c);
    CHECK(r.voided_attempts == 2);
    CHECK(r.voided_games == 0);
    CHECK(r.played() == 6);

    c.a = factory<DeadPredictor>();
    CHECK_THROWS(run_match(c));
}

TEST_CASE("temperature sweep") {
    auto c = base(factory<TailPredictor>(true), factory<TailPredictor>(false), 8);
    c.max_plies = 120;
    const std::vector<double> temps = {0.0, 0.2, 1.0};
    const auto spread = temperature_sweep(c, temps);
    REQUIRE(spread.results.size() == 3);
    for (const auto& r : spread.results) CHECK(r.played() == 8);

    auto c2 = c;
    c2.a = factory<TailPredictor>(false);
    const auto narrow = temperature_sweep(c2, temps);
    // Equal argmax: t = 0 games coincide; sampling exposes the tails.
    bool same0 = true, differs = false;
    for (std::size_t i = 0; i < 8; ++i) {
        same0 = same0 && spread.results[0].games[i].record.moves == narrow.results[0].games[i].record.moves;
        for (std::size_t k = 1; k < 3; ++k)
            differs = differs || spread.results[k].games[i].record.moves != narrow.results[k].games[i].record.moves;
    }
    CHECK(same0);
    CHECK(differs);
    CHECK(spread.to_json()["rows"].size() == 3);
    const auto text = spread.to_text();
    CHECK(std::count(text.begin(), text.end(), '\n') == 4);
    CHECK_THROWS(temperature_sweep(c, std::vector<double>{-1.0}));
}

TEST_CASE("elo conditioning") {
    const auto works = elo_conditioning_match(factory<ConditionedPredictor>(), 2600, 1200, 40, 1.0, 9, 1);
    MESSAGE("conditioned stub " << works.ratio_cell() << " p=" << works.p_value());
    CHECK(works.wins > 3 * works.losses);
    CHECK(works.p_value() < 0.01);
    CHECK(works.config["elo_a"] == 2600);

    const auto blind = elo_conditioning_match(factory<RandomLegalPredictor>(std::uint64_t{4}), 2600, 1200, 40, 1.0, 9, 2);
    CHECK(blind.p_value() > 0.01);
}

TEST_CASE("opening book") {
    const auto games = random_games(50, 30, 21);
    const auto book = OpeningBook::build(games, 4);
    CHECK(book.plies() == 4);
    CHECK(book.size() >= 1);
    Rng r1(5), r2(5);
    CHECK(book.sample(r1) == book.sample(r2));
    auto c = base(factory<RandomLegalPredictor>(std::uint64_t{1}), factory<RandomLegalPredictor>(std::uint64_t{1}), 6);
    c.book = &book;
    c.max_plies = 40;
    const auto m = run_match(c);
    for (const auto& g : m.games) {
        CHECK(g.opening_plies == 4);
        const auto& pair = m.games[g.index ^ 1].record.moves;
        CHECK(std::equal(pair.begin(), pair.begin() + 4, g.record.moves.begin()));
    }
    CHECK(m.config["opening"] == "book-4-ply");
    CHECK_THROWS(OpeningBook::build(games, 500));
}
