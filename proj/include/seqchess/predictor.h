#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "seqchess/ingest.h"
#include "seqchess/rng.h"
#include "seqchess/weighting.h"

namespace seqchess {

class PredictorError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct HiddenState {
    int layer = 0;
    std::vector<float> vec;

    bool operator==(const HiddenState&) const = default;
};

struct PredictionRecord {
    std::vector<Token> context;
    /// Sorted by token, no duplicates, move tokens only.
    std::vector<std::pair<Token, double>> distribution;
    std::vector<HiddenState> hidden;
    std::optional<double> latency_ms;

    double prob(Token t) const;
    /// Highest probability, lowest token id on ties.
    Token argmax() const;
    /// Throws PredictorError unless probabilities are >= 0, sum to 1 +- tol,
    /// and every key is a move token.
    void validate(const Vocabulary& vocab, double tol = 1e-6) const;
};

struct PredictOptions {
    bool want_hidden = false;
    int topk = 0;  // 0 = full distribution
};

class Predictor {
public:
    virtual ~Predictor() = default;
    virtual PredictionRecord predict(std::span<const Token> context, const PredictOptions& opt = {}) = 0;
    virtual std::string name() const = 0;
};

/// Builds one predictor per worker.
using PredictorFactory = std::function<std::unique_ptr<Predictor>()>;

/// Elo-conditioned add-k n-gram over move tokens. The context key is the
/// header Elo bucket plus up to n-1 previous moves. Lookup walks
/// (bucket, L), (any bucket, L) for L = n-1 down to 0 and uses the first
/// context whose mass exceeds k; with none it is uniform.
class NGramModel : public Predictor {
public:
    explicit NGramModel(int order = 4, double k = 0.01, const Vocabulary& vocab = standard_vocabulary());

    int order() const { return order_; }
    double smoothing() const { return k_; }
    const Vocabulary& vocabulary() const { return *vocab_; }

    void add_sequence(std::span<const Token> tokens, double weight);
    void merge(const NGramModel& other);

    /// Weighted count of `next` after `window` (most recent move last).
    /// nullopt bucket means the bucket-agnostic table.
    double count(std::optional<int> bucket, std::span<const Token> window, Token next) const;
    double mass(std::optional<int> bucket, std::span<const Token> window) const;
    double total_mass() const { return total_; }
    std::size_t context_count() const { return table_.size(); }

    /// Dense probabilities indexed by token - first_move_token().
    std::vector<double> dense(std::span<const Token> context) const;
    PredictionRecord predict(std::span<const Token> context, const PredictOptions& opt = {}) override;
    std::string name() const override;

    void save(std::ostream& out) const;
    static NGramModel load(std::istream& in, const Vocabulary& vocab = standard_vocabulary());

    /// Largest absolute difference between the two models' conditionals.
    static double sup_distance(const NGramModel& a, const NGramModel& b, std::span<const std::vector<Token>> contexts);

private:
    struct Node {
        double total = 0.0;
        std::unordered_map<Token, double> next;
    };
    std::uint64_t key(int bucket_slot, std::span<const Token> window) const;
    const Node* lookup(std::span<const Token> context) const;

    int order_;
    double k_;
    const Vocabulary* vocab_;
    std::unordered_map<std::uint64_t, Node> table_;
    double total_ = 0.0;
};

/// Factory whose predictors all read one immutable model.
PredictorFactory shared_ngram_factory(std::shared_ptr<const NGramModel> model);

/// Weighted counts over both sequences of every game; weights from the
/// average Elo. Games without Elo are skipped. Empty input is an error.
NGramModel train_ngram(std::span<const GameRecord> games, const WeightScheme& scheme, int order = 4, double k = 0.01);
NGramModel train_ngram(std::span<const TokenSequence> seqs, std::span<const double> weights, int order = 4,
                       double k = 0.01);

struct SampleResult {
    Token token = 0;
    Token raw = 0;
    bool raw_illegal = false;
};

/// Temperature 0 is argmax; otherwise sample proportional to p^(1/t)
/// (infinite t is uniform over the support). The raw draw comes first and is
/// checked against `legal` when given; with `mask`, an illegal raw draw is
/// replaced by a draw from the distribution restricted to `legal`.
SampleResult sample_move(const PredictionRecord& rec, double temperature, Rng& rng, std::span<const Token> legal = {},
                         bool mask = true);

/// Token ids of the legal moves in `state`, ascending.
std::vector<Token> legal_tokens(const Vocabulary& vocab, const chess::BoardState& state);

struct ExternalPredictorConfig {
    std::vector<std::string> argv;
    std::map<std::string, std::string> env;
    std::chrono::milliseconds timeout{30000};
};

/// Child process speaking the JSON-lines predictor protocol. After any
/// protocol violation, timeout or exit the session is dead and every later
/// call throws immediately.
class ExternalPredictor : public Predictor {
public:
    explicit ExternalPredictor(ExternalPredictorConfig cfg, const Vocabulary& vocab = standard_vocabulary());
    ~ExternalPredictor() override;

    PredictionRecord predict(std::span<const Token> context, const PredictOptions& opt = {}) override;
    std::string name() const override { return name_; }
    int layers() const { return layers_; }
    bool failed() const { return !failure_.empty(); }

private:
    [[noreturn]] void fail(const std::string& why);

    struct Impl;
    std::unique_ptr<Impl> impl_;
    const Vocabulary* vocab_;
    ExternalPredictorConfig cfg_;
    std::string name_;
    int layers_ = 0;
    std::uint64_t next_id_ = 1;
    std::string failure_;
};

/// Protocol encoding shared with the stub predictor.
nlohmann::json encode_request(const Vocabulary& vocab, std::uint64_t id, std::span<const Token> tokens,
                              const PredictOptions& opt);
PredictionRecord decode_response(const Vocabulary& vocab, const nlohmann::json& j, std::uint64_t expect_id,
                                 const PredictOptions& opt);
nlohmann::json encode_response(const Vocabulary& vocab, std::uint64_t id, const PredictionRecord& rec);

}  // namespace seqchess
