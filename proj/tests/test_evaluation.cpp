#include <doctest.h>

#include <cmath>
#include <map>
#include <random>
#include <sstream>

#include "fixtures.h"
#include "seqchess/evaluation.h"

using namespace seqchess;
using namespace fixtures;

namespace {

// Knows the human move at every sampled point.
class ReplayPredictor : public Predictor {
public:
    explicit ReplayPredictor(std::map<std::vector<Token>, Token> m) : m_(std::move(m)) {}
    PredictionRecord predict(std::span<const Token> ctx, const PredictOptions& = {}) override {
        PredictionRecord r;
        r.distribution = {{m_.at(std::vector<Token>(ctx.begin(), ctx.end())), 1.0}};
        return r;
    }
    std::string name() const override { return "replay"; }

private:
    std::map<std::vector<Token>, Token> m_;
};

}  // namespace

TEST_CASE("elo bands") {
    EloBands b;
    CHECK_FALSE(b.index(2099).has_value());
    CHECK(*b.index(2100) == 0);
    CHECK(*b.index(2699) == 2);
    CHECK(*b.index(3100) == 3);
    CHECK(b.label(0) == "2100-2300");
    CHECK(b.label(3) == "2700+");
    CHECK(b.label_of(1500) == "<2100");
}

TEST_CASE("decision point sampling") {
    const auto games = random_games(400, 120, 3);
    SampleConfig cfg;
    cfg.quota = 20;
    cfg.seed = 9;
    const auto a = sample_decision_points(games, cfg);
    // Random play rarely reaches the endgame cells, so some may be short.
    std::size_t total = 0;
    bool short_cell = false;
    for (const auto& [cell, n] : a.drawn) {
        CHECK(n == std::min<std::size_t>(20, a.available.at(cell)));
        short_cell |= a.available.at(cell) < 20;
        total += n;
    }
    CHECK(a.points.size() == total);
    CHECK(a.underfilled == short_cell);
    CHECK(a.drawn.size() == 12);
    std::map<std::pair<std::size_t, int>, int> per_cell;
    for (const auto& d : a.points) {
        CHECK(chess::is_legal(d.state, d.human));
        CHECK(d.context.size() <= kMaxSequenceLength - 1);
        CHECK(d.context.size() == kHeaderLength + static_cast<std::size_t>(d.ply));
        CHECK(replay_context(standard_vocabulary(), d.context) == d.state);
        CHECK(d.phase == chess::classify_phase(d.state, d.ply));
        ++per_cell[{d.band, static_cast<int>(d.phase)}];
    }
    CHECK(per_cell.size() == 12);

    const auto b = sample_decision_points(games, cfg);
    REQUIRE(b.points.size() == a.points.size());
    for (std::size_t i = 0; i < a.points.size(); ++i) {
        CHECK(a.points[i].game_index == b.points[i].game_index);
        CHECK(a.points[i].ply == b.points[i].ply);
    }
    cfg.seed = 10;
    const auto c = sample_decision_points(games, cfg);
    bool differs = false;
    for (std::size_t i = 0; i < a.points.size(); ++i) differs |= a.points[i].ply != c.points[i].ply;
    CHECK(differs);

    cfg.quota = 0;
    CHECK(sample_decision_points(games, cfg).points.empty());

    cfg.quota = 100000;
    const auto under = sample_decision_points(games, cfg);
    CHECK(under.underfilled);
    for (const auto& [cell, n] : under.drawn) CHECK(n == under.available.at(cell));
}

TEST_CASE("illegal move rate") {
    const auto games = random_games(120, 100, 5);
    IllegalRateConfig cfg;
    const auto masked = illegal_move_rate(
        [] { return std::unique_ptr<Predictor>(new LegalMaskPredictor(std::make_unique<PlantedIllegalPredictor>(0.5, 3))); },
        games, cfg);
    CHECK(masked.report.overall.n > 10000);
    CHECK(masked.report.overall.k == 0);

    for (double q : {0.01, 0.05}) {
        const auto r = illegal_move_rate(factory<PlantedIllegalPredictor>(q, std::uint64_t{11}), games, cfg);
        const auto iv = r.report.overall.ci();
        CHECK(r.report.overall.n >= 10000);
        CHECK(iv.lo <= q);
        CHECK(q <= iv.hi);
        // Cells add up to the overall count.
        std::uint64_t k = 0, n = 0;
        for (const auto& [c, p] : r.report.cells) {
            k += p.k;
            n += p.n;
        }
        CHECK(k == r.report.overall.k);
        CHECK(n == r.report.overall.n);
    }

    IllegalRateConfig sampled = cfg;
    sampled.mode = QueryMode::Sample;
    sampled.workers = 3;
    const auto s1 = illegal_move_rate(factory<PlantedIllegalPredictor>(0.05, std::uint64_t{11}), games, sampled);
    sampled.workers = 1;
    const auto s2 = illegal_move_rate(factory<PlantedIllegalPredictor>(0.05, std::uint64_t{11}), games, sampled);
    CHECK(s1.to_json() == s2.to_json());

    // Transposed prefixes reach one state and so share a legality set.
    const auto& v = standard_vocabulary();
    auto toks = [&](std::vector<const char*> ms) {
        std::vector<chess::Move> m;
        for (auto* u : ms) m.push_back(chess::parse_uci_move(u));
        return encode(v, m, SequenceHeader{}).tokens;
    };
    const auto direct = toks({"e2e4", "e7e5"});
    const auto around = toks({"e2e4", "e7e5", "g1f3", "g8f6", "f3g1", "f6g8"});
    CHECK(legal_tokens(v, replay_context(v, direct)) == legal_tokens(v, replay_context(v, around)));
}

TEST_CASE("top-1 accuracy") {
    const auto games = random_games(300, 90, 6);
    SampleConfig cfg;
    cfg.quota = 150;
    const auto pts = sample_decision_points(games, cfg).points;

    // Short openings repeat across games, so one context can have several answers.
    std::map<std::vector<Token>, Token> answers;
    for (const auto& d : pts) answers[d.context] = *standard_vocabulary().move_token(d.human);
    std::size_t reachable = 0;
    for (const auto& d : pts) reachable += answers.at(d.context) == *standard_vocabulary().move_token(d.human);
    CHECK(reachable > pts.size() * 9 / 10);
    const auto perfect = top1_accuracy([&] { return std::unique_ptr<Predictor>(new ReplayPredictor(answers)); }, pts);
    CHECK(perfect.raw.overall.k == reachable);
    CHECK(perfect.masked.overall.k == reachable);

    const auto rnd = top1_accuracy(factory<RandomLegalPredictor>(std::uint64_t{4}), pts, EloBands{}, 2);
    std::map<std::string, std::pair<double, double>> expect;  // cell -> (sum p, sum p(1-p))
    for (const auto& d : pts) {
        const double p = 1.0 / static_cast<double>(chess::legal_moves(d.state).size());
        auto& e = expect[EloBands{}.label(d.band) + "/" + chess::to_string(d.phase)];
        e.first += p;
        e.second += p * (1 - p);
    }
    for (const auto& [cell, e] : expect) {
        const auto& got = rnd.raw.cells.at(cell);
        CHECK(std::abs(static_cast<double>(got.k) - e.first) <= 4.0 * std::sqrt(e.second) + 1.0);
    }
    std::uint64_t k = 0, n = 0;
    for (const auto& [c, p] : rnd.raw.cells) {
        k += p.k;
        n += p.n;
    }
    CHECK(k == rnd.raw.overall.k);
    CHECK(n == rnd.raw.overall.n);

    const auto text = rnd.raw.to_text();
    for (const char* col : {"Overall", "2100-2300", "2300-2500", "2500-2700", "2700+", "Open.", "Mid.", "End."})
        CHECK(text.find(col) != std::string::npos);
    CHECK_THROWS(top1_accuracy(factory<RandomLegalPredictor>(std::uint64_t{4}), std::span<const DecisionPoint>{}));
}

TEST_CASE("blunder alignment") {
    // 1000 human blunders with 492 model blunders; 1000 non-blunders with 66.
    std::vector<double> h, m;
    for (int i = 0; i < 1000; ++i) {
        h.push_back(300);
        m.push_back(i < 492 ? 250 : 10);
    }
    for (int i = 0; i < 1000; ++i) {
        h.push_back(20);
        m.push_back(i < 66 ? 150 : 0);
    }
    const auto r = blunder_alignment(h, m, 100);
    CHECK(*r.p_model_given_human == doctest::Approx(0.492));
    CHECK(*r.p_model_given_not_human == doctest::Approx(0.066));
    CHECK(*r.lift == doctest::Approx(0.492 / 0.066));
    CHECK(std::abs(*r.lift - 7.4) <= 0.1);

    // Relabelling non-blunder magnitudes changes nothing.
    auto h2 = h;
    for (auto& x : h2)
        if (x <= 100) x = 99;
    CHECK(*blunder_alignment(h2, m, 100).lift == *r.lift);

    const auto same = blunder_alignment(h, h, 100);
    CHECK(*same.p_model_given_human == 1.0);
    CHECK(*same.p_model_given_not_human == 0.0);
    CHECK_FALSE(same.lift.has_value());
    CHECK(same.lift_infinite);

    const std::vector<double> calm = {10, 20, 30}, any = {500, 0, 0};
    const auto none = blunder_alignment(calm, any, 100);
    CHECK_FALSE(none.lift.has_value());
    CHECK_FALSE(none.p_model_given_human.has_value());

    std::mt19937_64 rng(12);
    std::bernoulli_distribution coin(0.2);
    std::vector<double> hi, mi;
    for (int i = 0; i < 100000; ++i) {
        hi.push_back(coin(rng) ? 300 : 10);
        mi.push_back(coin(rng) ? 300 : 10);
    }
    const auto ind = blunder_alignment(hi, mi, 100);
    CHECK(std::abs(*ind.lift - 1.0) < 0.05);
    CHECK(ind.ci_given_human.lo <= *ind.p_model_given_not_human + 0.01);
    CHECK_THROWS(blunder_alignment(hi, calm, 100));
}

TEST_CASE("cpl profile") {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(0, 1000);
    std::vector<double> h;
    for (int i = 0; i < 5000; ++i) h.push_back(u(rng));
    const auto same = cpl_profile(h, h);
    REQUIRE(same.cells.size() == 6);
    for (const auto& c : same.cells) {
        REQUIRE(c.mean.has_value());
        CHECK(c.mean->mean >= c.lo);
        CHECK(c.mean->mean <= c.hi);
    }
    for (std::size_t i = 1; i < same.cells.size(); ++i) CHECK(same.cells[i].mean->mean > same.cells[i - 1].mean->mean);

    const std::vector<double> flat(h.size(), 42.0);
    for (const auto& c : cpl_profile(h, flat).cells) CHECK(c.mean->mean == doctest::Approx(42.0));

    // Bivariate normal with correlation rho, mapped to CPL-like values.
    for (double rho : {0.6, -0.6}) {
        std::normal_distribution<double> z(0, 1);
        std::vector<double> hh, mm;
        for (int i = 0; i < 20000; ++i) {
            const double a = z(rng), b = rho * a + std::sqrt(1 - rho * rho) * z(rng);
            hh.push_back(std::clamp(150 + 120 * a, 0.0, 1000.0));
            mm.push_back(std::clamp(150 + 120 * b, 0.0, 1000.0));
        }
        const auto prof = cpl_profile(hh, mm);
        std::vector<double> means;
        for (const auto& c : prof.cells)
            if (c.n > 200) means.push_back(c.mean->mean);
        REQUIRE(means.size() >= 3);
        for (std::size_t i = 1; i < means.size(); ++i) CHECK((rho > 0 ? means[i] > means[i - 1] : means[i] < means[i - 1]));
    }

    const std::vector<double> one = {700};
    const auto sparse = cpl_profile(one, one);
    CHECK_FALSE(sparse.cells[0].mean.has_value());
    CHECK(sparse.cells[5].n == 1);
    std::ostringstream csv;
    sparse.write_csv(csv);
    CHECK(csv.str().rfind("bucket,value,ci_lo,ci_hi,n\n", 0) == 0);
}

TEST_CASE("repetition splicing") {
    std::vector<chess::Move> knights;
    for (const auto* u : {"g1f3", "g8f6", "f3g1", "f6g8"}) knights.push_back(chess::parse_uci_move(u));
    CHECK(strip_repetition_history(knights, 0, 4).empty());
    CHECK(strip_repetition_history(knights, 2, 2) == knights);
    CHECK_THROWS(strip_repetition_history(knights, 0, 2));
    CHECK_THROWS(strip_repetition_history(knights, 3, 2));

    CHECK(eval_bucket(120) == EvalBucket::Advantage);
    CHECK(eval_bucket(201) == EvalBucket::BigAdvantage);
    CHECK(eval_bucket(200) == EvalBucket::Advantage);
    CHECK(eval_bucket(50) == EvalBucket::Equal);
    CHECK(eval_bucket(-50) == EvalBucket::Equal);
    CHECK(eval_bucket(-51) == EvalBucket::Disadvantage);
    CHECK(eval_bucket(-201) == EvalBucket::BigDisadvantage);

    std::mt19937_64 rng(31);
    std::vector<GameRecord> games;
    for (int i = 0; i < 60; ++i) games.push_back(cycle_game(rng, 120, 3, "c" + std::to_string(i)));
    const auto scan = find_repetition_points(games);
    CHECK(scan.splices_checked > 100);
    CHECK(scan.splice_failures == 0);
    const auto& v = standard_vocabulary();
    for (const auto& p : scan.points) {
        CHECK(replay_context(v, p.full_context).key() == p.state.key());
        CHECK(replay_context(v, p.stripped_context).key() == p.state.key());
        CHECK(p.stripped_context.size() < p.full_context.size());
        CHECK(chess::is_legal(p.state, v.move_of(p.repeat_move)));
    }

    const auto blind = repetition_experiment(games, factory<PositionOnlyPredictor>(), nullptr, {}, 2);
    CHECK(blind.total.n == scan.points.size());
    CHECK(blind.total.flips == 0);
    CHECK(blind.buckets[static_cast<int>(EvalBucket::Equal)].n == blind.total.n);

    const auto aware = repetition_experiment(games, factory<RepetitionAwarePredictor>(), nullptr, {}, 1);
    CHECK(static_cast<double>(aware.total.flips) >= 0.99 * static_cast<double>(aware.total.n));

    MaterialEngine probe;
    EngineFactory material = [] { return std::unique_ptr<Engine>(new MaterialEngine()); };
    const auto graded = repetition_experiment(games, factory<PositionOnlyPredictor>(), &material, SearchLimits{1, {}, {}}, 2);
    CHECK(graded.total.n == blind.total.n);
    std::uint64_t sum = 0;
    for (const auto& b : graded.buckets) sum += b.n;
    CHECK(sum == graded.total.n);
    std::ostringstream csv;
    graded.write_csv(csv);
    CHECK(csv.str().find("big_advantage") != std::string::npos);
}

TEST_CASE("paired cpl uses annotations when present") {
    auto games = random_games(30, 40, 14);
    for (auto& g : games) {
        g.cpl.assign(g.moves.size(), 0.0);
        for (std::size_t i = 0; i < g.cpl.size(); ++i) g.cpl[i] = static_cast<double>(i);
    }
    SampleConfig cfg;
    cfg.quota = 3;
    const auto pts = sample_decision_points(games, cfg).points;
    EngineFactory material = [] { return std::unique_ptr<Engine>(new MaterialEngine()); };
    const auto pc = paired_cpl(material, factory<RandomLegalPredictor>(std::uint64_t{2}), pts, games, SearchLimits{1, {}, {}}, 2);
    REQUIRE(pc.human.size() == pts.size());
    for (std::size_t i = 0; i < pc.human.size(); ++i) {
        CHECK(pc.human[i] == static_cast<double>(pts[pc.point_index[i]].ply));
        CHECK(pc.model[i] >= 0.0);
        CHECK(pc.model[i] <= 1000.0);
    }
}

TEST_CASE("standard position index") {
    std::vector<GameRecord> ref;
    GameRecord a, b;
    for (const auto* u : {"e2e4", "e7e5", "g1f3"}) a.moves.push_back(chess::parse_uci_move(u));
    for (const auto* u : {"e2e4", "c7c5"}) b.moves.push_back(chess::parse_uci_move(u));
    ref = {a, b};
    const auto idx = StandardPositionIndex::build(ref);
    CHECK(idx.is_standard(chess::BoardState::initial().key()));
    CHECK(idx.is_standard(chess::replay(std::span(a.moves).first(1)).final_state.key()));
    CHECK_FALSE(idx.is_standard(chess::replay(a.moves).final_state.key()));
    CHECK(idx.size() == 2);
}
