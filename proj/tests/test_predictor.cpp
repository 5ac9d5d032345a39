#include <doctest.h>

#include <chrono>
#include <limits>
#include <cmath>
#include <map>
#include <random>
#include <sstream>

#include "seqchess/predictor.h"

using namespace seqchess;
using chess::Color;

namespace {

const Vocabulary& V() { return standard_vocabulary(); }

Token tok(const char* uci) { return *V().find(uci); }

TokenSequence seq(int elo, std::vector<const char*> moves, Color c = Color::White) {
    std::vector<chess::Move> ms;
    for (const auto* m : moves) ms.push_back(chess::parse_uci_move(m));
    return encode(V(), ms, SequenceHeader{TimeControl::Blitz, elo, c});
}

std::vector<GameRecord> random_games(int count, int plies, std::uint64_t seed, int elo_lo = 800, int elo_span = 2000) {
    std::mt19937_64 rng(seed);
    std::vector<GameRecord> out;
    for (int i = 0; i < count; ++i) {
        GameRecord g;
        g.white_elo = elo_lo + static_cast<int>(rng() % elo_span);
        g.black_elo = g.white_elo;
        auto s = chess::BoardState::initial();
        for (int p = 0; p < plies; ++p) {
            const auto ms = chess::legal_moves(s);
            if (ms.empty()) break;
            // Few choices so contexts repeat.
            g.moves.push_back(ms[rng() % std::min<std::size_t>(3, ms.size())]);
            s = s.after(g.moves.back());
        }
        out.push_back(g);
    }
    return out;
}

std::vector<std::vector<Token>> contexts_of(const std::vector<GameRecord>& games, std::size_t cap) {
    std::vector<std::vector<Token>> out;
    for (const auto& g : games) {
        for (std::size_t ply = 0; ply <= g.moves.size() && out.size() < cap; ply += 3) {
            const auto c = context_for(V(), g, ply, ply % 2 ? Color::Black : Color::White);
            out.push_back(c.tokens);
        }
    }
    return out;
}

}  // namespace

TEST_CASE("uniform n-gram counts are raw frequencies") {
    const auto games = random_games(40, 20, 1);
    const auto m = train_ngram(games, WeightScheme::uniform(), 3, 0.01);
    // Independent tally of (previous two moves, next) over both sequences of each game.
    std::map<std::tuple<Token, Token, Token>, double> raw;
    for (const auto& g : games) {
        for (std::size_t i = 2; i < g.moves.size(); ++i)
            raw[{*V().move_token(g.moves[i - 2]), *V().move_token(g.moves[i - 1]), *V().move_token(g.moves[i])}] += 2.0;
    }
    for (const auto& [k, c] : raw) {
        const Token w[2] = {std::get<0>(k), std::get<1>(k)};
        CHECK(m.count(std::nullopt, w, std::get<2>(k)) == c);
    }
    CHECK_THROWS(train_ngram(std::vector<GameRecord>{}, WeightScheme::uniform()));
    CHECK_THROWS(NGramModel(0, 0.01));
    CHECK_THROWS(NGramModel(3, 0.0));
}

TEST_CASE("weighted counts and hand-computed add-k") {
    NGramModel half(2, 0.01);
    const auto s = seq(1500, {"e2e4", "e7e5", "g1f3"});
    half.add_sequence(s.tokens, 0.5);
    const Token e4 = tok("e2e4"), e5 = tok("e7e5"), nf3 = tok("g1f3");
    CHECK(half.count(1500, std::span<const Token>{}, e4) == 0.5);
    CHECK(half.count(1500, std::span<const Token>(&e4, 1), e5) == 0.5);
    CHECK(half.count(1500, std::span<const Token>(&e5, 1), nf3) == 0.5);
    CHECK(half.count(std::nullopt, std::span<const Token>(&e5, 1), nf3) == 0.5);

    // Five-move toy corpus, both sequences in the same bucket, weights (1, 3).
    const double k = 0.01;
    const auto a = seq(1500, {"e2e4", "e7e5", "g1f3", "b8c6", "f1c4"});
    const auto b = seq(1550, {"e2e4", "c7c5", "g1f3", "d7d6", "d2d4"});
    const std::vector<TokenSequence> seqs = {a, b};
    const std::vector<double> w = {1.0, 3.0};
    const auto m = train_ngram(seqs, w, 2, k);
    const double Vn = static_cast<double>(V().move_token_count());
    auto p = [&](std::vector<const char*> ctx_moves, const char* next) {
        return m.dense(seq(1500, ctx_moves).tokens)[tok(next) - V().first_move_token()];
    };
    // After e2e4: e7e5 once (w 1), c7c5 once (w 3).
    CHECK(p({"e2e4"}, "e7e5") == doctest::Approx((1 + k) / (4 + k * Vn)).epsilon(1e-12));
    CHECK(p({"e2e4"}, "c7c5") == doctest::Approx((3 + k) / (4 + k * Vn)).epsilon(1e-12));
    CHECK(p({"e2e4"}, "a2a3") == doctest::Approx(k / (4 + k * Vn)).epsilon(1e-12));
    // After g1f3: b8c6 (1) and d7d6 (3).
    CHECK(p({"e2e4", "e7e5", "g1f3"}, "d7d6") == doctest::Approx((3 + k) / (4 + k * Vn)).epsilon(1e-12));
    // Empty context: e2e4 twice in total mass 1*5 + 3*5.
    CHECK(p({}, "e2e4") == doctest::Approx((1 + 3 + k) / (20 + k * Vn)).epsilon(1e-12));
    // Unseen window backs off to the empty window.
    CHECK(p({"h2h4"}, "g1f3") == doctest::Approx((1 + 3 + k) / (20 + k * Vn)).epsilon(1e-12));
}

TEST_CASE("prediction shape") {
    NGramModel empty(1, 0.01);
    const auto u = empty.predict(seq(1500, {"e2e4"}).tokens);
    REQUIRE(u.distribution.size() == V().move_token_count());
    for (const auto& [t, p] : u.distribution) CHECK(p == doctest::Approx(1.0 / V().move_token_count()));
    CHECK(u.argmax() == V().first_move_token());

    NGramModel m(4, 0.01);
    for (int i = 0; i < 50; ++i) m.add_sequence(seq(2000, {"e2e4", "e7e5"}).tokens, 1.0);
    CHECK(m.predict(seq(2000, {"e2e4"}).tokens).argmax() == tok("e7e5"));
    CHECK(m.predict(seq(900, {"e2e4"}).tokens).argmax() == tok("e7e5"));  // pooled fallback

    const auto games = random_games(50, 40, 2);
    const auto big = train_ngram(games, WeightScheme::linear(), 4, 0.01);
    NGramModel copy = big;
    for (const auto& c : contexts_of(random_games(30, 60, 99), 300)) {
        const auto rec = copy.predict(c);
        double s = 0;
        for (const auto& [t, p] : rec.distribution) s += p;
        CHECK(std::abs(s - 1.0) < 1e-9);
        CHECK_NOTHROW(rec.validate(V()));
        const auto top = copy.predict(c, PredictOptions{false, 5});
        CHECK(top.distribution.size() == 5);
        CHECK(top.argmax() == rec.argmax());
        CHECK_NOTHROW(top.validate(V()));
    }
}

TEST_CASE("counts are linear in the corpus") {
    const auto a = random_games(30, 30, 5), b = random_games(30, 30, 6);
    auto ab = a;
    ab.insert(ab.end(), b.begin(), b.end());
    const auto s = WeightScheme::exponential(200);
    auto ma = train_ngram(a, s, 4, 0.01);
    const auto mb = train_ngram(b, s, 4, 0.01);
    const auto mab = train_ngram(ab, s, 4, 0.01);
    ma.merge(mb);
    CHECK(ma.context_count() == mab.context_count());
    CHECK(ma.total_mass() == doctest::Approx(mab.total_mass()));
    const auto ctx = contexts_of(ab, 400);
    CHECK(NGramModel::sup_distance(ma, mab, ctx) < 1e-12);
}

TEST_CASE("weighting limits") {
    // High-Elo games play one way, low-Elo games another.
    auto low = random_games(40, 30, 7, 900, 300);
    auto high = random_games(10, 30, 8, 2800, 100);  // all at the weight ceiling
    auto all = low;
    all.insert(all.end(), high.begin(), high.end());

    const auto uniform = train_ngram(all, WeightScheme::uniform());
    const auto nearly_flat = train_ngram(all, WeightScheme::linear(0.999999));
    const auto ctx_all = contexts_of(all, 500);
    CHECK(NGramModel::sup_distance(uniform, nearly_flat, ctx_all) < 1e-5);

    const auto high_only = train_ngram(high, WeightScheme::uniform());
    const auto steep = train_ngram(all, WeightScheme::exponential(1e12));
    // Contexts conditioned on a high bucket; low-bucket tables keep their own vanishing mass.
    const auto ctx_high = contexts_of(high, 500);
    CHECK(NGramModel::sup_distance(high_only, steep, ctx_high) < 1e-6);
    CHECK(NGramModel::sup_distance(high_only, uniform, ctx_high) > 1e-3);
}

TEST_CASE("model file round-trip is byte stable") {
    const auto m = train_ngram(random_games(20, 30, 9), WeightScheme::linear());
    std::stringstream a;
    m.save(a);
    const auto back = NGramModel::load(a);
    std::stringstream b;
    back.save(b);
    CHECK(a.str() == b.str());
    CHECK(back.order() == m.order());
    const auto ctx = contexts_of(random_games(5, 30, 10), 50);
    CHECK(NGramModel::sup_distance(m, back, ctx) == 0.0);
    std::stringstream junk("not a model");
    CHECK_THROWS(NGramModel::load(junk));
}

TEST_CASE("sampling") {
    PredictionRecord r;
    const Token a = tok("e2e4"), b = tok("d2d4"), c = tok("c2c4");
    r.distribution = {{b, 0.4}, {a, 0.6}};
    std::sort(r.distribution.begin(), r.distribution.end());
    Rng rng(1);
    for (int i = 0; i < 50; ++i) CHECK(sample_move(r, 0.0, rng).token == a);

    PredictionRecord tie;
    tie.distribution = {{b, 0.5}, {a, 0.5}};
    std::sort(tie.distribution.begin(), tie.distribution.end());
    CHECK(sample_move(tie, 0.0, rng).token == std::min(a, b));

    PredictionRecord point;
    point.distribution = {{a, 0.0}, {c, 1.0}};
    std::sort(point.distribution.begin(), point.distribution.end());
    for (double t : {0.0, 0.5, 1.0, 10.0, std::numeric_limits<double>::infinity()}) CHECK(sample_move(point, t, rng).token == c);

    // Chi-square against the expected frequencies (df = 3, 99.9% point 16.27).
    PredictionRecord four;
    const Token ts[4] = {tok("a2a3"), tok("b2b3"), tok("c2c3"), tok("d2d3")};
    const double ps[4] = {0.1, 0.2, 0.3, 0.4};
    for (int i = 0; i < 4; ++i) four.distribution.emplace_back(ts[i], ps[i]);
    auto chi = [&](double temperature, const double* expect) {
        std::map<Token, int> hits;
        Rng g(42);
        const int n = 10000;
        for (int i = 0; i < n; ++i) ++hits[sample_move(four, temperature, g).token];
        double x = 0;
        for (int i = 0; i < 4; ++i) {
            const double e = expect[i] * n;
            x += (hits[ts[i]] - e) * (hits[ts[i]] - e) / e;
        }
        return x;
    };
    CHECK(chi(1.0, ps) < 16.27);
    const double flat[4] = {0.25, 0.25, 0.25, 0.25};
    CHECK(chi(std::numeric_limits<double>::infinity(), flat) < 16.27);
    CHECK(chi(1e9, flat) < 16.27);
    double sharp[4], z = 0;
    for (int i = 0; i < 4; ++i) z += sharp[i] = ps[i] * ps[i];
    for (auto& s : sharp) s /= z;
    CHECK(chi(0.5, sharp) < 16.27);
    CHECK_THROWS(sample_move(four, -1.0, rng));
}

TEST_CASE("mask changes only the returned move") {
    PredictionRecord r;
    const std::vector<Token> legal = {tok("a2a3"), tok("b2b3")};
    r.distribution = {{tok("a2a3"), 0.1}, {tok("b2b3"), 0.1}, {tok("e2e5"), 0.8}};
    std::sort(r.distribution.begin(), r.distribution.end());
    int illegal = 0;
    for (std::uint64_t s = 0; s < 500; ++s) {
        Rng x(s), y(s);
        const auto masked = sample_move(r, 1.0, x, legal, true);
        const auto raw = sample_move(r, 1.0, y, legal, false);
        CHECK(masked.raw == raw.raw);
        CHECK(masked.raw_illegal == raw.raw_illegal);
        CHECK((masked.token == legal[0] || masked.token == legal[1]));
        illegal += raw.raw_illegal;
    }
    CHECK(illegal > 300);
    Rng g(1);
    const auto t0 = sample_move(r, 0.0, g, legal);
    CHECK(t0.raw_illegal);
    CHECK(t0.token == legal[0]);

    PredictionRecord none;
    none.distribution = {{tok("e2e5"), 1.0}};
    CHECK_THROWS_AS(sample_move(none, 1.0, g, legal), PredictorError);

    const auto lt = legal_tokens(V(), chess::BoardState::initial());
    CHECK(lt.size() == 20);
    CHECK(std::is_sorted(lt.begin(), lt.end()));
}

TEST_CASE("external predictor protocol") {
    ExternalPredictorConfig cfg;
    cfg.argv = {SEQCHESS_STUB_PREDICTOR, "--mode", "fixed"};
    cfg.timeout = std::chrono::milliseconds(5000);
    ExternalPredictor p(cfg);
    CHECK(p.name() == "stub-fixed");
    CHECK(p.layers() == 2);
    const auto ctx = seq(1500, {"e2e4"}).tokens;
    const auto rec = p.predict(ctx, PredictOptions{true, 0});
    CHECK(rec.context == ctx);
    REQUIRE(rec.distribution.size() == 3);
    CHECK(rec.prob(tok("e2e4")) == 0.5);
    CHECK(rec.prob(tok("d2d4")) == 0.3);
    CHECK(rec.prob(tok("g1f3")) == 0.2);
    REQUIRE(rec.hidden.size() == 2);
    CHECK(rec.hidden[1].layer == 1);
    CHECK(rec.hidden[1].vec.size() == 8);
    CHECK(rec.hidden[0].vec[1] == static_cast<float>(ctx.size()) * 0.125f - 0.3f);
    CHECK(rec.latency_ms.has_value());

    // Arbitrary doubles survive the wire bit for bit.
    PredictionRecord odd;
    odd.distribution = {{tok("a2a3"), 1.0 / 3.0}, {tok("b2b3"), 2.0 / 3.0}};
    const auto j = nlohmann::json::parse(encode_response(V(), 7, odd).dump());
    const auto back = decode_response(V(), j, 7, {});
    CHECK(back.distribution == odd.distribution);
    CHECK_THROWS_AS(decode_response(V(), j, 8, {}), PredictorError);

    ExternalPredictorConfig bad = cfg;
    bad.argv = {SEQCHESS_STUB_PREDICTOR, "--mode", "unnormalized"};
    ExternalPredictor u(bad);
    CHECK_THROWS_AS(u.predict(ctx), PredictorError);
    CHECK(u.failed());
    CHECK_THROWS_AS(u.predict(ctx), PredictorError);

    // Top-k responses may carry partial mass and are renormalised.
    ExternalPredictor topk(bad);
    CHECK_THROWS_AS(topk.predict(ctx, PredictOptions{false, 3}), PredictorError);  // 1.5 > 1
}

TEST_CASE("external predictor faults") {
    ExternalPredictorConfig cfg;
    cfg.argv = {SEQCHESS_STUB_PREDICTOR, "--mode", "fixed", "--die-after", "2"};
    cfg.timeout = std::chrono::milliseconds(5000);
    ExternalPredictor p(cfg);
    const auto ctx = seq(1500, {}).tokens;
    CHECK_NOTHROW(p.predict(ctx));
    CHECK_NOTHROW(p.predict(ctx));
    CHECK_THROWS_AS(p.predict(ctx), PredictorError);
    CHECK(p.failed());
    const auto t0 = std::chrono::steady_clock::now();
    CHECK_THROWS_AS(p.predict(ctx), PredictorError);
    CHECK(std::chrono::steady_clock::now() - t0 < std::chrono::milliseconds(50));

    ExternalPredictorConfig hang = cfg;
    hang.argv = {SEQCHESS_STUB_PREDICTOR, "--mode", "hang"};
    hang.timeout = std::chrono::milliseconds(200);
    ExternalPredictor h(hang);
    CHECK_THROWS_AS(h.predict(ctx), PredictorError);

    ExternalPredictorConfig missing;
    missing.argv = {"/nonexistent/predictor"};
    missing.timeout = std::chrono::milliseconds(500);
    CHECK_THROWS_AS(ExternalPredictor{missing}, PredictorError);

    ExternalPredictorConfig legal = cfg;
    legal.argv = {SEQCHESS_STUB_PREDICTOR, "--mode", "uniform-legal"};
    ExternalPredictor l(legal);
    const auto r = l.predict(seq(1500, {"e2e4", "e7e5"}).tokens);
    CHECK(r.distribution.size() == 29);
}
