#include "seqchess/evaluation.h"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>
#include <unordered_map>

#include "seqchess/parallel.h"
#include "seqchess/rng.h"

namespace seqchess {

using nlohmann::json;

std::optional<std::size_t> EloBands::index(int elo) const {
    std::optional<std::size_t> out;
    for (std::size_t i = 0; i < edges.size(); ++i)
        if (elo >= edges[i]) out = i;
    return out;
}

std::string EloBands::label(std::size_t i) const {
    if (i + 1 >= edges.size()) return std::to_string(edges.at(i)) + "+";
    return std::to_string(edges[i]) + "-" + std::to_string(edges[i + 1]);
}

std::string EloBands::label_of(int elo) const {
    const auto i = index(elo);
    return i ? label(*i) : "<" + std::to_string(edges.empty() ? 0 : edges.front());
}

std::vector<Token> mover_context(const Vocabulary& vocab, const GameRecord& g, std::size_t ply) {
    return context_for(vocab, g, ply, ply % 2 == 0 ? chess::Color::White : chess::Color::Black).tokens;
}

namespace {

std::string cell_name(const std::string& band, chess::Phase p) { return band + "/" + chess::to_string(p); }

chess::Color mover_at(std::size_t ply) { return ply % 2 == 0 ? chess::Color::White : chess::Color::Black; }

bool tc_matches(const GameRecord& g, const std::optional<TimeControl>& tc) { return !tc || g.time_control == *tc; }

// Highest probability among `legal`, lowest token on ties.
std::optional<Token> legal_argmax(const PredictionRecord& rec, std::span<const Token> legal) {
    std::optional<Token> best;
    double bp = -1.0;
    for (Token t : legal) {
        const double p = rec.prob(t);
        if (p > bp) {
            bp = p;
            best = t;
        }
    }
    return best;
}

template <class Worker>
struct WorkerPool {
    std::vector<std::unique_ptr<Worker>> items;
    std::function<std::unique_ptr<Worker>()> make;
    WorkerPool(int workers, std::function<std::unique_ptr<Worker>()> f)
        : items(static_cast<std::size_t>(std::max(1, workers))), make(std::move(f)) {}
    Worker& get(int w) {
        auto& p = items[static_cast<std::size_t>(w)];
        if (!p) p = make();
        return *p;
    }
    void reset(int w) { items[static_cast<std::size_t>(w)].reset(); }
};

}  // namespace

json SamplingReport::to_json() const {
    return json{{"points", points.size()},
                {"requested_per_cell", requested_per_cell},
                {"available", available},
                {"drawn", drawn},
                {"underfilled", underfilled}};
}

SamplingReport sample_decision_points(std::span<const GameRecord> games, const SampleConfig& cfg) {
    const Vocabulary& vocab = standard_vocabulary();
    const std::size_t nb = cfg.bands.edges.size();
    struct Cand {
        std::uint32_t game;
        std::uint16_t ply;
    };
    std::vector<std::vector<Cand>> cells(nb * 3);
    for (std::size_t gi = 0; gi < games.size(); ++gi) {
        const auto& g = games[gi];
        if (!tc_matches(g, cfg.time_control) || g.moves.empty()) continue;
        const auto rp = chess::replay(g.moves);
        const std::size_t last = std::min<std::size_t>(g.moves.size() - 1, kMaxDecisionPly);
        for (std::size_t p = 0; p <= last; ++p) {
            const auto band = cfg.bands.index(g.elo_of(mover_at(p)));
            if (!band) continue;
            const auto phase = p == 0 ? chess::Phase::Opening : rp.phases[p - 1];
            cells[*band * 3 + static_cast<std::size_t>(phase)].push_back({static_cast<std::uint32_t>(gi), static_cast<std::uint16_t>(p)});
        }
    }

    SamplingReport rep;
    rep.requested_per_cell = cfg.quota;
    std::vector<Cand> chosen;
    for (std::size_t c = 0; c < cells.size(); ++c) {
        auto& v = cells[c];
        const auto name = cell_name(cfg.bands.label(c / 3), static_cast<chess::Phase>(c % 3));
        rep.available[name] = v.size();
        const std::size_t take = std::min(cfg.quota, v.size());
        rep.drawn[name] = take;
        if (take < cfg.quota) rep.underfilled = true;
        Rng rng(derive_seed(cfg.seed, "cell", c));
        for (std::size_t i = 0; i < take; ++i) {
            const std::size_t j = i + rng.below(v.size() - i);
            std::swap(v[i], v[j]);
            chosen.push_back(v[i]);
        }
    }
    std::sort(chosen.begin(), chosen.end(), [](const Cand& a, const Cand& b) {
        return a.game != b.game ? a.game < b.game : a.ply < b.ply;
    });

    std::size_t k = 0;
    while (k < chosen.size()) {
        const std::size_t gi = chosen[k].game;
        const auto& g = games[gi];
        chess::BoardState s = chess::BoardState::initial();
        std::size_t at = 0;
        for (; k < chosen.size() && chosen[k].game == gi; ++k) {
            const std::size_t p = chosen[k].ply;
            for (; at < p; ++at) s = s.after(g.moves[at]);
            DecisionPoint d;
            d.game_id = g.id;
            d.game_index = gi;
            d.ply = static_cast<int>(p);
            d.context = mover_context(vocab, g, p);
            d.human = g.moves[p];
            d.mover = mover_at(p);
            d.mover_elo = g.elo_of(d.mover);
            d.band = *cfg.bands.index(d.mover_elo);
            d.phase = chess::classify_phase(s, static_cast<int>(p));
            d.state = s;
            rep.points.push_back(std::move(d));
        }
    }
    return rep;
}

std::optional<double> Proportion::value() const {
    if (n == 0) return std::nullopt;
    return static_cast<double>(k) / static_cast<double>(n);
}

stats::Interval Proportion::ci() const { return n ? stats::wilson_interval(k, n) : stats::Interval{0.0, 1.0}; }

json Proportion::to_json() const {
    json j{{"k", k}, {"n", n}};
    if (n) {
        const auto iv = ci();
        j["value"] = *value();
        j["ci_lo"] = iv.lo;
        j["ci_hi"] = iv.hi;
    } else {
        j["value"] = nullptr;
    }
    return j;
}

SlicedReport::SlicedReport(std::string name, const EloBands& bands) : metric(std::move(name)) {
    for (std::size_t i = 0; i < bands.edges.size(); ++i) band_order.push_back(bands.label(i));
}

void SlicedReport::add(const std::string& band, chess::Phase phase, bool hit) {
    if (std::find(band_order.begin(), band_order.end(), band) == band_order.end()) band_order.insert(band_order.begin(), band);
    overall.add(hit);
    by_band[band].add(hit);
    by_phase[static_cast<std::size_t>(phase)].add(hit);
    cells[cell_name(band, phase)].add(hit);
}

void SlicedReport::merge(const SlicedReport& o) {
    for (const auto& b : o.band_order)
        if (std::find(band_order.begin(), band_order.end(), b) == band_order.end()) band_order.insert(band_order.begin(), b);
    overall.merge(o.overall);
    for (const auto& [k, v] : o.by_band) by_band[k].merge(v);
    for (std::size_t i = 0; i < 3; ++i) by_phase[i].merge(o.by_phase[i]);
    for (const auto& [k, v] : o.cells) cells[k].merge(v);
}

json SlicedReport::to_json() const {
    json bands = json::array();
    for (const auto& b : band_order) {
        auto it = by_band.find(b);
        json cell = it == by_band.end() ? Proportion{}.to_json() : it->second.to_json();
        cell["band"] = b;
        bands.push_back(cell);
    }
    json phases = json::object();
    for (std::size_t i = 0; i < 3; ++i) phases[chess::to_string(static_cast<chess::Phase>(i))] = by_phase[i].to_json();
    json cj = json::object();
    for (const auto& [k, v] : cells) cj[k] = v.to_json();
    return json{{"metric", metric}, {"overall", overall.to_json()}, {"bands", bands}, {"phases", phases}, {"cells", cj}};
}

std::string SlicedReport::to_text() const {
    std::vector<std::pair<std::string, const Proportion*>> cols = {{"Overall", &overall}};
    static const Proportion empty;
    for (const auto& b : band_order) {
        auto it = by_band.find(b);
        cols.emplace_back(b, it == by_band.end() ? &empty : &it->second);
    }
    cols.emplace_back("Open.", &by_phase[0]);
    cols.emplace_back("Mid.", &by_phase[1]);
    cols.emplace_back("End.", &by_phase[2]);
    std::ostringstream head, row, count;
    head << std::left << std::setw(14) << metric;
    row << std::left << std::setw(14) << "value %";
    count << std::left << std::setw(14) << "n";
    for (const auto& [name, p] : cols) {
        head << std::right << std::setw(11) << name;
        std::ostringstream v;
        if (auto x = p->value()) v << std::fixed << std::setprecision(2) << 100.0 * *x;
        else v << "-";
        row << std::right << std::setw(11) << v.str();
        count << std::right << std::setw(11) << p->n;
    }
    return head.str() + "\n" + row.str() + "\n" + count.str() + "\n";
}

json IllegalRateResult::to_json() const {
    json j = report.to_json();
    j["unavailable"] = unavailable;
    return j;
}

IllegalRateResult illegal_move_rate(const PredictorFactory& make, std::span<const GameRecord> games,
                                    const IllegalRateConfig& cfg) {
    const Vocabulary& vocab = standard_vocabulary();
    std::vector<SlicedReport> per_game(games.size(), SlicedReport("illegal_rate", cfg.bands));
    std::vector<std::uint64_t> unavailable(games.size(), 0);
    WorkerPool<Predictor> pool(cfg.workers, make);
    parallel_for(games.size(), cfg.workers, [&](int w, std::size_t gi) {
        const auto& g = games[gi];
        if (!tc_matches(g, cfg.time_control)) return;
        chess::BoardState s = chess::BoardState::initial();
        const std::size_t last = std::min<std::size_t>(g.moves.size(), kMaxDecisionPly + 1);
        for (std::size_t p = 0; p < last; ++p) {
            const auto legal = legal_tokens(vocab, s);
            try {
                const auto rec = pool.get(w).predict(mover_context(vocab, g, p));
                Token t;
                if (cfg.mode == QueryMode::Argmax) {
                    t = rec.argmax();
                } else {
                    Rng rng(derive_seed(cfg.seed, "illegal", (static_cast<std::uint64_t>(gi) << 16) | p));
                    t = sample_move(rec, cfg.temperature, rng).raw;
                }
                const bool illegal = !std::binary_search(legal.begin(), legal.end(), t);
                per_game[gi].add(cfg.bands.label_of(g.elo_of(mover_at(p))), chess::classify_phase(s, static_cast<int>(p)), illegal);
            } catch (const PredictorError&) {
                ++unavailable[gi];
                pool.reset(w);
            }
            s = s.after(g.moves[p]);
        }
    });
    IllegalRateResult out{SlicedReport("illegal_rate", cfg.bands), 0};
    for (std::size_t i = 0; i < games.size(); ++i) {
        out.report.merge(per_game[i]);
        out.unavailable += unavailable[i];
    }
    return out;
}

json Top1Result::to_json() const {
    return json{{"top1_raw", raw.to_json()}, {"top1_masked", masked.to_json()}, {"unavailable", unavailable}};
}

std::string Top1Result::to_text() const { return raw.to_text() + "\n" + masked.to_text(); }

Top1Result top1_accuracy(const PredictorFactory& make, std::span<const DecisionPoint> points, const EloBands& bands,
                         int workers) {
    if (points.empty()) throw std::invalid_argument("top1_accuracy: no decision points");
    const Vocabulary& vocab = standard_vocabulary();
    struct Outcome {
        bool ok = false, raw = false, masked = false;
    };
    std::vector<Outcome> res(points.size());
    WorkerPool<Predictor> pool(workers, make);
    parallel_for(points.size(), workers, [&](int w, std::size_t i) {
        const auto& d = points[i];
        const Token human = *vocab.move_token(d.human);
        try {
            const auto rec = pool.get(w).predict(d.context);
            const auto legal = legal_tokens(vocab, d.state);
            res[i] = {true, rec.argmax() == human, legal_argmax(rec, legal) == human};
        } catch (const PredictorError&) {
            pool.reset(w);
        }
    });
    Top1Result out{SlicedReport("top1_raw", bands), SlicedReport("top1_masked", bands), 0};
    for (std::size_t i = 0; i < points.size(); ++i) {
        const auto& d = points[i];
        if (!res[i].ok) {
            ++out.unavailable;
            continue;
        }
        const auto band = bands.label_of(d.mover_elo);
        out.raw.add(band, d.phase, res[i].raw);
        out.masked.add(band, d.phase, res[i].masked);
    }
    return out;
}

chess::BoardState replay_context(const Vocabulary& vocab, std::span<const Token> context) {
    std::vector<chess::Move> moves;
    for (Token t : context)
        if (vocab.is_move(t)) moves.push_back(vocab.move_of(t));
    return chess::replay(moves).final_state;
}

PredictionRecord LegalMaskPredictor::predict(std::span<const Token> context, const PredictOptions& opt) {
    const Vocabulary& vocab = standard_vocabulary();
    auto rec = inner_->predict(context, opt);
    const auto legal = legal_tokens(vocab, replay_context(vocab, context));
    if (legal.empty()) throw PredictorError("no legal moves in this position");
    std::vector<std::pair<Token, double>> d;
    double total = 0.0;
    for (Token t : legal) {
        const double p = rec.prob(t);
        d.emplace_back(t, p);
        total += p;
    }
    for (auto& e : d) e.second = total > 0.0 ? e.second / total : 1.0 / static_cast<double>(legal.size());
    rec.distribution = std::move(d);
    return rec;
}

json AlignmentReport::to_json() const {
    auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
    return json{{"tau", tau},
                {"pairs", pairs},
                {"human_blunders", human_blunders},
                {"human_non_blunders", human_non_blunders},
                {"model_on_human_blunder", model_on_human_blunder},
                {"model_on_human_non_blunder", model_on_human_non_blunder},
                {"p_model_given_human", opt(p_model_given_human)},
                {"p_model_given_not_human", opt(p_model_given_not_human)},
                {"ci_given_human", {ci_given_human.lo, ci_given_human.hi}},
                {"ci_given_not_human", {ci_given_not_human.lo, ci_given_not_human.hi}},
                {"lift", opt(lift)},
                {"lift_infinite", lift_infinite},
                {"human_rate", human_rate},
                {"model_rate", model_rate}};
}

AlignmentReport blunder_alignment(std::span<const double> human, std::span<const double> model, double tau) {
    if (human.size() != model.size()) throw std::invalid_argument("blunder_alignment: arrays are not paired");
    AlignmentReport r;
    r.tau = tau;
    r.pairs = human.size();
    std::uint64_t model_total = 0;
    for (std::size_t i = 0; i < human.size(); ++i) {
        const bool h = human[i] > tau, m = model[i] > tau;
        model_total += m;
        if (h) {
            ++r.human_blunders;
            r.model_on_human_blunder += m;
        } else {
            ++r.human_non_blunders;
            r.model_on_human_non_blunder += m;
        }
    }
    if (r.pairs) {
        r.human_rate = static_cast<double>(r.human_blunders) / static_cast<double>(r.pairs);
        r.model_rate = static_cast<double>(model_total) / static_cast<double>(r.pairs);
    }
    if (r.human_blunders) {
        r.p_model_given_human = static_cast<double>(r.model_on_human_blunder) / static_cast<double>(r.human_blunders);
        r.ci_given_human = stats::wilson_interval(r.model_on_human_blunder, r.human_blunders);
    }
    if (r.human_non_blunders) {
        r.p_model_given_not_human =
            static_cast<double>(r.model_on_human_non_blunder) / static_cast<double>(r.human_non_blunders);
        r.ci_given_not_human = stats::wilson_interval(r.model_on_human_non_blunder, r.human_non_blunders);
    }
    if (r.p_model_given_human && r.p_model_given_not_human) {
        if (*r.p_model_given_not_human > 0.0) r.lift = *r.p_model_given_human / *r.p_model_given_not_human;
        else r.lift_infinite = *r.p_model_given_human > 0.0;
    }
    return r;
}

json CplProfile::to_json() const {
    json cells_j = json::array();
    for (const auto& c : cells) {
        json j{{"lo", c.lo}, {"hi", c.hi}, {"n", c.n}};
        if (c.mean) {
            j["mean"] = c.mean->mean;
            j["ci_lo"] = c.mean->lo;
            j["ci_hi"] = c.mean->hi;
        } else {
            j["mean"] = nullptr;
        }
        cells_j.push_back(j);
    }
    return json{{"cells", cells_j}};
}

void CplProfile::write_csv(std::ostream& out) const {
    out << "bucket,value,ci_lo,ci_hi,n\n";
    for (const auto& c : cells) {
        out << c.lo << "-" << c.hi << ",";
        if (c.mean) out << c.mean->mean << "," << c.mean->lo << "," << c.mean->hi;
        else out << ",,";
        out << "," << c.n << "\n";
    }
}

CplProfile cpl_profile(std::span<const double> human, std::span<const double> model, std::span<const double> edges) {
    if (human.size() != model.size()) throw std::invalid_argument("cpl_profile: arrays are not paired");
    if (edges.size() < 2 || !std::is_sorted(edges.begin(), edges.end()))
        throw std::invalid_argument("cpl_profile: need at least two ascending edges");
    const std::size_t nb = edges.size() - 1;
    std::vector<std::vector<double>> vals(nb);
    for (std::size_t i = 0; i < human.size(); ++i) {
        const double h = human[i];
        if (h < edges.front() || h > edges.back()) continue;
        std::size_t b = static_cast<std::size_t>(std::upper_bound(edges.begin(), edges.end(), h) - edges.begin());
        b = std::min(b == 0 ? 0 : b - 1, nb - 1);
        vals[b].push_back(model[i]);
    }
    CplProfile p;
    for (std::size_t b = 0; b < nb; ++b) {
        ProfileCell c{edges[b], edges[b + 1], vals[b].size(), std::nullopt};
        if (!vals[b].empty()) c.mean = stats::mean_interval(vals[b]);
        p.cells.push_back(c);
    }
    return p;
}

PairedCpl paired_cpl(const EngineFactory& engines, const PredictorFactory& predictors,
                     std::span<const DecisionPoint> points, std::span<const GameRecord> games,
                     const SearchLimits& limits, int workers) {
    const Vocabulary& vocab = standard_vocabulary();
    struct Pair {
        bool ok = false;
        double h = 0, m = 0;
    };
    std::vector<Pair> res(points.size());
    WorkerPool<Engine> epool(workers, engines);
    WorkerPool<Predictor> ppool(workers, predictors);
    parallel_for(points.size(), workers, [&](int w, std::size_t i) {
        const auto& d = points[i];
        try {
            const auto& g = games[d.game_index];
            const double h = g.cpl.size() == g.moves.size() && !g.cpl.empty()
                                 ? g.cpl[static_cast<std::size_t>(d.ply)]
                                 : cpl(epool.get(w), d.state, d.human, limits);
            const auto rec = ppool.get(w).predict(d.context);
            const auto pick = legal_argmax(rec, legal_tokens(vocab, d.state));
            const double m = cpl(epool.get(w), d.state, vocab.move_of(*pick), limits);
            res[i] = {true, h, m};
        } catch (const EngineError&) {
            epool.reset(w);
        } catch (const PredictorError&) {
            ppool.reset(w);
        }
    });
    PairedCpl out;
    for (std::size_t i = 0; i < res.size(); ++i) {
        if (!res[i].ok) {
            ++out.unavailable;
            continue;
        }
        out.human.push_back(res[i].h);
        out.model.push_back(res[i].m);
        out.point_index.push_back(i);
    }
    return out;
}

std::vector<chess::Move> strip_repetition_history(std::span<const chess::Move> moves, std::size_t i, std::size_t j) {
    if (i > j || j > moves.size()) throw std::invalid_argument("strip_repetition_history: need i <= j <= length");
    const auto rp = chess::replay(moves.first(j));
    const auto key_at = [&](std::size_t p) { return p == 0 ? chess::BoardState::initial().key() : rp.keys[p - 1]; };
    if (!(key_at(i) == key_at(j)))
        throw std::invalid_argument("strip_repetition_history: positions after plies " + std::to_string(i) + " and " +
                                    std::to_string(j) + " differ");
    std::vector<chess::Move> out(moves.begin(), moves.begin() + static_cast<std::ptrdiff_t>(i));
    out.insert(out.end(), moves.begin() + static_cast<std::ptrdiff_t>(j), moves.end());
    return out;
}

const char* to_string(EvalBucket b) {
    switch (b) {
        case EvalBucket::BigAdvantage: return "big_advantage";
        case EvalBucket::Advantage: return "advantage";
        case EvalBucket::Equal: return "equal";
        case EvalBucket::Disadvantage: return "disadvantage";
        case EvalBucket::BigDisadvantage: return "big_disadvantage";
    }
    return "equal";
}

EvalBucket eval_bucket(int cp) {
    if (cp > 200) return EvalBucket::BigAdvantage;
    if (cp > 50) return EvalBucket::Advantage;
    if (cp >= -50) return EvalBucket::Equal;
    if (cp >= -200) return EvalBucket::Disadvantage;
    return EvalBucket::BigDisadvantage;
}

RepetitionScan find_repetition_points(std::span<const GameRecord> games) {
    const Vocabulary& vocab = standard_vocabulary();
    RepetitionScan scan;
    for (std::size_t gi = 0; gi < games.size(); ++gi) {
        const auto& g = games[gi];
        std::vector<chess::BoardState> states{chess::BoardState::initial()};
        for (const auto& m : g.moves) states.push_back(states.back().after(m));
        std::unordered_map<std::uint64_t, std::size_t> first;   // key -> first ply
        std::unordered_map<std::uint64_t, std::size_t> latest;  // key -> latest ply
        const std::size_t last = std::min<std::size_t>(g.moves.size(), kMaxDecisionPly);
        for (std::size_t j = 0; j <= last; ++j) {
            const auto key = states[j].key().value;
            auto f = first.find(key);
            if (f != first.end()) {
                ++scan.repeats_seen;
                const std::size_t i = f->second;
                const auto& here = states[j];
                std::optional<Token> best;
                std::size_t best_ply = 0;
                for (const auto& m : chess::legal_moves(here)) {
                    auto l = latest.find(here.after(m).key().value);
                    if (l == latest.end()) continue;
                    const Token t = *vocab.move_token(m);
                    if (!best || l->second > best_ply || (l->second == best_ply && t < *best)) {
                        best = t;
                        best_ply = l->second;
                    }
                }
                if (!best) {
                    ++scan.no_repeat_move;
                } else {
                    const std::span<const chess::Move> prefix(g.moves.data(), j);
                    const auto spliced = strip_repetition_history(prefix, i, j);
                    ++scan.splices_checked;
                    bool ok = false;
                    try {
                        ok = chess::replay(spliced).final_state.key() == here.key();
                    } catch (const chess::IllegalMoveError&) {
                    }
                    if (!ok) {
                        ++scan.splice_failures;
                    } else {
                        RepetitionPoint p;
                        p.game_index = gi;
                        p.first_ply = i;
                        p.ply = j;
                        p.repeat_move = *best;
                        p.state = here;
                        p.full_context = mover_context(vocab, g, j);
                        GameRecord cut = g;
                        cut.moves = spliced;
                        p.stripped_context = context_for(vocab, cut, spliced.size(), mover_at(j)).tokens;
                        scan.points.push_back(std::move(p));
                    }
                }
            } else {
                first.emplace(key, j);
            }
            latest[key] = j;
        }
    }
    return scan;
}

void RepetitionBucket::merge(const RepetitionBucket& o) {
    n += o.n;
    flips += o.flips;
    prefer_full += o.prefer_full;
    prefer_stripped += o.prefer_stripped;
    mass_full += o.mass_full;
    mass_stripped += o.mass_stripped;
}

json RepetitionBucket::to_json() const {
    const double d = n ? static_cast<double>(n) : 1.0;
    json j{{"n", n}, {"flips", flips}, {"prefer_full", prefer_full}, {"prefer_stripped", prefer_stripped}};
    if (n) {
        j["flip_fraction"] = flips / d;
        j["mean_mass_full"] = mass_full / d;
        j["mean_mass_stripped"] = mass_stripped / d;
        j["preference_full"] = prefer_full / d;
        j["preference_stripped"] = prefer_stripped / d;
    } else {
        j["flip_fraction"] = nullptr;
    }
    return j;
}

json RepetitionReport::to_json() const {
    json b = json::object();
    for (std::size_t i = 0; i < buckets.size(); ++i) b[to_string(static_cast<EvalBucket>(i))] = buckets[i].to_json();
    return json{{"buckets", b},
                {"total", total.to_json()},
                {"diagnostics",
                 {{"repeats_seen", repeats_seen},
                  {"no_repeat_move", no_repeat_move},
                  {"splices_checked", splices_checked},
                  {"splice_failures", splice_failures},
                  {"unavailable", unavailable}}}};
}

void RepetitionReport::write_csv(std::ostream& out) const {
    out << "bucket,n,flip_fraction,mean_mass_full,mean_mass_stripped,preference_full,preference_stripped\n";
    auto row = [&](const std::string& name, const RepetitionBucket& b) {
        out << name << "," << b.n;
        if (b.n) {
            const double d = static_cast<double>(b.n);
            out << "," << b.flips / d << "," << b.mass_full / d << "," << b.mass_stripped / d << "," << b.prefer_full / d
                << "," << b.prefer_stripped / d;
        } else {
            out << ",,,,,";
        }
        out << "\n";
    };
    for (std::size_t i = 0; i < buckets.size(); ++i) row(to_string(static_cast<EvalBucket>(i)), buckets[i]);
    row("total", total);
}

RepetitionReport repetition_experiment(std::span<const GameRecord> games, const PredictorFactory& predictors,
                                       const EngineFactory* engines, const SearchLimits& limits, int workers) {
    const auto scan = find_repetition_points(games);
    RepetitionReport rep;
    rep.repeats_seen = scan.repeats_seen;
    rep.no_repeat_move = scan.no_repeat_move;
    rep.splices_checked = scan.splices_checked;
    rep.splice_failures = scan.splice_failures;

    struct Outcome {
        bool ok = false;
        EvalBucket bucket = EvalBucket::Equal;
        RepetitionBucket stats;
    };
    std::vector<Outcome> res(scan.points.size());
    WorkerPool<Predictor> ppool(workers, predictors);
    WorkerPool<Engine> epool(workers, engines ? *engines : EngineFactory([] { return std::unique_ptr<Engine>(); }));
    parallel_for(scan.points.size(), workers, [&](int w, std::size_t i) {
        const auto& p = scan.points[i];
        try {
            Outcome o;
            if (engines) o.bucket = eval_bucket(epool.get(w).evaluate(p.state, limits).score);
            auto& pred = ppool.get(w);
            const auto full = pred.predict(p.full_context);
            const auto stripped = pred.predict(p.stripped_context);
            o.stats.n = 1;
            o.stats.flips = full.argmax() != stripped.argmax();
            o.stats.prefer_full = full.argmax() == p.repeat_move;
            o.stats.prefer_stripped = stripped.argmax() == p.repeat_move;
            o.stats.mass_full = full.prob(p.repeat_move);
            o.stats.mass_stripped = stripped.prob(p.repeat_move);
            o.ok = true;
            res[i] = o;
        } catch (const EngineError&) {
            epool.reset(w);
        } catch (const PredictorError&) {
            ppool.reset(w);
        }
    });
    for (const auto& o : res) {
        if (!o.ok) {
            ++rep.unavailable;
            continue;
        }
        rep.buckets[static_cast<std::size_t>(o.bucket)].merge(o.stats);
        rep.total.merge(o.stats);
    }
    return rep;
}

StandardPositionIndex StandardPositionIndex::build(std::span<const GameRecord> reference, int max_ply, int min_games) {
    std::unordered_map<std::uint64_t, int> games_seen;
    for (const auto& g : reference) {
        std::unordered_set<std::uint64_t> mine;
        chess::BoardState s = chess::BoardState::initial();
        mine.insert(s.key().value);
        for (std::size_t p = 0; p < g.moves.size() && static_cast<int>(p) < max_ply; ++p) {
            s = s.after(g.moves[p]);
            mine.insert(s.key().value);
        }
        for (auto k : mine) ++games_seen[k];
    }
    StandardPositionIndex idx;
    for (const auto& [k, c] : games_seen)
        if (c >= min_games) idx.keys_.insert(k);
    return idx;
}

}  // namespace seqchess
