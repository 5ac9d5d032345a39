#include "seqchess/engine.h"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "seqchess/process.h"

namespace seqchess {

using nlohmann::json;

std::string SearchLimits::go_command() const {
    std::string cmd = "go";
    if (nodes) cmd += " nodes " + std::to_string(*nodes);
    if (movetime_ms) cmd += " movetime " + std::to_string(*movetime_ms);
    if (!nodes && !movetime_ms) cmd += " depth " + std::to_string(depth);
    return cmd;
}

json SearchLimits::to_json() const {
    json j{{"depth", depth}};
    j["nodes"] = nodes ? json(*nodes) : json(nullptr);
    j["movetime_ms"] = movetime_ms ? json(*movetime_ms) : json(nullptr);
    return j;
}

int mate_to_score(int k) {
    if (k > 0) return kMateScore - k;
    return -(kMateScore + k);  // k <= 0: -(10000 - |k|)
}

namespace {

std::vector<std::string> words(const std::string& line) {
    std::istringstream in(line);
    std::vector<std::string> out;
    for (std::string w; in >> w;) out.push_back(w);
    return out;
}

long long to_int(const std::string& s, const std::string& line) {
    try {
        std::size_t used = 0;
        const long long v = std::stoll(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw EngineError("malformed number '" + s + "' in: " + line);
    }
}

}  // namespace

EvalResult parse_search_output(std::span<const std::string> lines) {
    EvalResult r;
    bool have_score = false, have_exact = false, have_best = false;
    for (const auto& line : lines) {
        const auto w = words(line);
        if (w.empty()) continue;
        if (w[0] == "bestmove") {
            if (w.size() < 2 || w[1] == "(none)" || w[1] == "0000") throw EngineError("engine returned no move: " + line);
            try {
                r.best = chess::parse_uci_move(w[1]);
            } catch (const chess::ParseError&) {
                throw EngineError("malformed bestmove: " + line);
            }
            have_best = true;
            break;
        }
        if (w[0] != "info") continue;
        int score = 0, depth = r.depth;
        std::optional<int> mate;
        std::uint64_t nodes = r.nodes;
        bool scored = false, bound = false, other_pv = false;
        for (std::size_t i = 1; i < w.size(); ++i) {
            if (w[i] == "depth" && i + 1 < w.size()) {
                depth = static_cast<int>(to_int(w[++i], line));
            } else if (w[i] == "nodes" && i + 1 < w.size()) {
                nodes = static_cast<std::uint64_t>(to_int(w[++i], line));
            } else if (w[i] == "multipv" && i + 1 < w.size()) {
                other_pv = to_int(w[++i], line) != 1;
            } else if (w[i] == "score") {
                if (i + 2 >= w.size()) throw EngineError("truncated score in: " + line);
                const auto kind = w[i + 1];
                const auto v = to_int(w[i + 2], line);
                if (kind == "cp") {
                    score = static_cast<int>(std::clamp<long long>(v, -(kMateScore - 1), kMateScore - 1));
                } else if (kind == "mate") {
                    mate = static_cast<int>(v);
                    score = mate_to_score(*mate);
                } else {
                    throw EngineError("unknown score kind '" + kind + "' in: " + line);
                }
                scored = true;
                i += 2;
            } else if (w[i] == "lowerbound" || w[i] == "upperbound") {
                bound = true;
            } else if (w[i] == "pv" || w[i] == "string") {
                break;
            }
        }
        if (!scored || other_pv) continue;
        if (bound && have_exact) continue;
        r.score = score;
        r.mate_in = mate;
        r.depth = depth;
        r.nodes = nodes;
        have_score = true;
        have_exact = have_exact || !bound;
    }
    if (!have_best) throw EngineError("search output has no bestmove line");
    if (!have_score) throw EngineError("search output has no score");
    return r;
}

UciEngine::UciEngine(UciEngineConfig cfg) : cfg_(std::move(cfg)) {
    try {
        proc_ = std::make_unique<ChildProcess>(cfg_.argv, cfg_.env);
    } catch (const ProcessError& e) {
        throw EngineError(e.what());
    }
    send("uci");
    for (;;) {
        const auto line = receive(cfg_.handshake_timeout, "uciok");
        if (line.rfind("id name ", 0) == 0) name_ = line.substr(8);
        if (line == "uciok") break;
    }
    for (const auto& [k, v] : cfg_.options) send("setoption name " + k + " value " + v);
    send("isready");
    while (receive(cfg_.handshake_timeout, "readyok") != "readyok") {
    }
}

UciEngine::~UciEngine() {
    if (proc_ && !dead_) {
        try {
            proc_->write_line("quit");
        } catch (...) {
        }
    }
}

std::vector<std::string> UciEngine::tail() const {
    const std::size_t n = std::min<std::size_t>(transcript_.size(), 20);
    return {transcript_.end() - static_cast<std::ptrdiff_t>(n), transcript_.end()};
}

void UciEngine::fail(const std::string& why) {
    dead_ = true;
    proc_->terminate();
    throw EngineError("engine session failed: " + why, tail());
}

void UciEngine::send(const std::string& line) {
    if (dead_) throw EngineError("engine session is dead", tail());
    transcript_.push_back("> " + line);
    try {
        proc_->write_line(line);
    } catch (const ProcessError& e) {
        fail(e.what());
    }
}

std::string UciEngine::receive(std::chrono::milliseconds timeout, const char* waiting_for) {
    std::optional<std::string> line;
    try {
        line = proc_->read_line(timeout);
    } catch (const ProcessError& e) {
        fail(std::string(e.what()) + " while waiting for " + waiting_for);
    }
    if (!line) fail(std::string("timed out waiting for ") + waiting_for);
    transcript_.push_back("< " + *line);
    return *line;
}

EvalResult UciEngine::evaluate(const chess::BoardState& state, const SearchLimits& limits) {
    if (chess::legal_moves(state).empty()) throw EngineError("cannot evaluate a terminal position");
    send("position fen " + chess::to_fen(state));
    send(limits.go_command());
    std::vector<std::string> lines;
    for (;;) {
        lines.push_back(receive(cfg_.search_timeout, "bestmove"));
        if (lines.back().rfind("bestmove", 0) == 0) break;
    }
    try {
        EvalResult r = parse_search_output(lines);
        if (!chess::is_legal(state, r.best)) throw EngineError("engine proposed illegal move " + r.best.uci());
        return r;
    } catch (const EngineError& e) {
        throw EngineError(e.what(), tail());
    }
}

int material_balance(const chess::BoardState& s) {
    static constexpr int value[6] = {100, 300, 300, 500, 900, 0};
    int total = 0;
    for (chess::Piece p : s.squares()) {
        if (p == chess::Piece::Empty) continue;
        const int v = value[static_cast<int>(chess::kind_of(p))];
        total += chess::color_of(p) == s.side_to_move() ? v : -v;
    }
    return total;
}

namespace {

constexpr int kMateBand = kMateScore - 1000;

struct Search {
    std::uint64_t nodes = 0;

    static int victim(const chess::BoardState& s, const chess::Move& m) {
        static constexpr int value[6] = {1, 3, 3, 5, 9, 0};
        const auto p = s.at(m.to);
        return p == chess::Piece::Empty ? (m.promotion ? 8 : 0) : 10 * value[static_cast<int>(chess::kind_of(p))];
    }

    std::vector<chess::Move> ordered(const chess::BoardState& s) {
        auto ms = chess::legal_moves(s);
        std::stable_sort(ms.begin(), ms.end(), [&](const auto& a, const auto& b) { return victim(s, a) > victim(s, b); });
        return ms;
    }

    int negamax(const chess::BoardState& s, int depth, int alpha, int beta, int ply) {
        ++nodes;
        const auto ms = ordered(s);
        if (ms.empty()) return s.in_check() ? -(kMateScore - ply) : 0;
        if (depth == 0) return material_balance(s);
        int best = -kMateScore - 1;
        for (const auto& m : ms) {
            const int v = -negamax(s.after(m), depth - 1, -beta, -alpha, ply + 1);
            best = std::max(best, v);
            alpha = std::max(alpha, v);
            if (alpha >= beta) break;
        }
        return best;
    }
};

}  // namespace

EvalResult MaterialEngine::evaluate(const chess::BoardState& state, const SearchLimits& limits) {
    Search search;
    const auto ms = search.ordered(state);
    if (ms.empty()) throw EngineError("cannot evaluate a terminal position");
    const int depth = std::clamp(limits.depth, 1, 4);
    int alpha = -kMateScore - 1;
    EvalResult r;
    r.best = ms.front();
    for (const auto& m : ms) {
        const int v = -search.negamax(state.after(m), depth - 1, -kMateScore - 1, -alpha, 1);
        if (v > alpha) {
            alpha = v;
            r.best = m;
        }
    }
    r.depth = depth;
    r.nodes = search.nodes;
    if (std::abs(alpha) > kMateBand) {
        const int plies = kMateScore - std::abs(alpha);
        const int moves = (plies + 1) / 2;
        r.mate_in = alpha > 0 ? moves : -moves;
        r.score = mate_to_score(*r.mate_in);
    } else {
        r.score = alpha;
    }
    return r;
}

double cpl(Engine& engine, const chess::BoardState& state, const chess::Move& played, const SearchLimits& limits) {
    if (!chess::is_legal(state, played)) throw std::invalid_argument("cpl: played move " + played.uci() + " is illegal");
    const EvalResult best = engine.evaluate(state, limits);
    if (best.best == played) return 0.0;
    const auto after = state.after(played);
    int mover_after;
    if (chess::legal_moves(after).empty()) {
        mover_after = after.in_check() ? mate_to_score(1) : 0;
    } else {
        mover_after = -engine.evaluate(after, limits).score;
    }
    return std::clamp(static_cast<double>(best.score - mover_after), 0.0, kCplClip);
}

json AgreementResult::to_json() const {
    return json{{"agree", agree},           {"evaluated", evaluated}, {"unavailable", unavailable},
                {"rate", rate},             {"ci_lo", ci.lo},         {"ci_hi", ci.hi},
                {"coverage", evaluated + unavailable ? static_cast<double>(evaluated) / (evaluated + unavailable) : 0.0}};
}

AgreementResult agreement_rate(Engine& engine, Predictor& predictor, std::span<const AgreementPoint> points,
                               const SearchLimits& limits) {
    if (points.empty()) throw std::invalid_argument("agreement_rate: no decision points");
    const Vocabulary& v = standard_vocabulary();
    AgreementResult r;
    for (const auto& p : points) {
        try {
            const auto ev = engine.evaluate(p.state, limits);
            const auto pred = predictor.predict(p.context);
            ++r.evaluated;
            r.agree += v.move_of(pred.argmax()) == ev.best;
        } catch (const EngineError&) {
            ++r.unavailable;
        } catch (const PredictorError&) {
            ++r.unavailable;
        }
    }
    if (r.evaluated > 0) {
        r.rate = static_cast<double>(r.agree) / static_cast<double>(r.evaluated);
        r.ci = stats::wilson_interval(r.agree, r.evaluated);
    }
    return r;
}

std::unique_ptr<Engine> open_engine(const std::string& spec, const UciEngineConfig& base) {
    if (spec.empty() || spec == "material") return std::make_unique<MaterialEngine>();
    UciEngineConfig cfg = base;
    cfg.argv = split_command(spec);
    return std::make_unique<UciEngine>(cfg);
}

}  // namespace seqchess
