#pragma once

#include <chrono>
#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "seqchess/chess.h"
#include "seqchess/predictor.h"
#include "seqchess/stats.h"

namespace seqchess {

constexpr int kMateScore = 10000;
constexpr double kCplClip = 1000.0;

class EngineError : public std::runtime_error {
public:
    EngineError(const std::string& what, std::vector<std::string> transcript_tail = {})
        : std::runtime_error(what), tail_(std::move(transcript_tail)) {}
    const std::vector<std::string>& transcript_tail() const { return tail_; }

private:
    std::vector<std::string> tail_;
};

struct SearchLimits {
    int depth = 12;
    std::optional<std::uint64_t> nodes;
    std::optional<int> movetime_ms;

    std::string go_command() const;
    nlohmann::json to_json() const;
};

struct EvalResult {
    int score = 0;  // side to move, mate k mapped to +-(10000 - k)
    std::optional<int> mate_in;
    chess::Move best;
    int depth = 0;
    std::uint64_t nodes = 0;

    bool operator==(const EvalResult&) const = default;
};

/// +-(10000 - |k|); mate 0 means the side to move is already mated.
int mate_to_score(int k);

class Engine {
public:
    virtual ~Engine() = default;
    /// Throws EngineError on terminal positions or protocol trouble.
    virtual EvalResult evaluate(const chess::BoardState& state, const SearchLimits& limits) = 0;
    virtual std::string name() const = 0;
};

using EngineFactory = std::function<std::unique_ptr<Engine>()>;

/// Reads the last "info ... score" line and the "bestmove" line of one search.
EvalResult parse_search_output(std::span<const std::string> lines);

struct UciEngineConfig {
    std::vector<std::string> argv;
    std::map<std::string, std::string> env;
    std::map<std::string, std::string> options;  // setoption name/value pairs
    std::chrono::milliseconds handshake_timeout{10000};
    std::chrono::milliseconds search_timeout{60000};
};

class ChildProcess;

/// Engine subprocess over the UCI text protocol. Keeps a full transcript;
/// lines sent are prefixed "> ", lines received "< ".
class UciEngine : public Engine {
public:
    explicit UciEngine(UciEngineConfig cfg);
    ~UciEngine() override;

    EvalResult evaluate(const chess::BoardState& state, const SearchLimits& limits) override;
    std::string name() const override { return name_; }
    const std::vector<std::string>& transcript() const { return transcript_; }

private:
    void send(const std::string& line);
    std::string receive(std::chrono::milliseconds timeout, const char* waiting_for);
    [[noreturn]] void fail(const std::string& why);
    std::vector<std::string> tail() const;

    UciEngineConfig cfg_;
    std::unique_ptr<ChildProcess> proc_;
    std::string name_ = "uci";
    std::vector<std::string> transcript_;
    bool dead_ = false;
};

/// In-process fixed-depth alpha-beta on material only. Deterministic; used
/// when no external engine is configured and as the mock engine's fallback.
class MaterialEngine : public Engine {
public:
    EvalResult evaluate(const chess::BoardState& state, const SearchLimits& limits) override;
    std::string name() const override { return "material"; }
};

int material_balance(const chess::BoardState& state);  // side to move, centipawns

/// max(0, eval(best) - eval after `played` from the mover's view), clipped to
/// [0, 1000]. Zero when `played` is the engine's best move.
double cpl(Engine& engine, const chess::BoardState& state, const chess::Move& played, const SearchLimits& limits);

struct AgreementPoint {
    chess::BoardState state;
    std::vector<Token> context;
};

struct AgreementResult {
    std::uint64_t agree = 0;
    std::uint64_t evaluated = 0;
    std::uint64_t unavailable = 0;  // predictor or engine failed at this point
    double rate = 0.0;
    stats::Interval ci;
    nlohmann::json to_json() const;
};

/// Fraction of points where the predictor's argmax equals the engine's best move.
AgreementResult agreement_rate(Engine& engine, Predictor& predictor, std::span<const AgreementPoint> points,
                               const SearchLimits& limits);

/// Opens `spec`: "material" for the built-in engine, otherwise a command line.
std::unique_ptr<Engine> open_engine(const std::string& spec, const UciEngineConfig& base = {});

}  // namespace seqchess
