#include "seqchess/predictor.h"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <istream>
#include <limits>
#include <ostream>

#include "seqchess/process.h"

namespace seqchess {

using nlohmann::json;

double PredictionRecord::prob(Token t) const {
    auto it = std::lower_bound(distribution.begin(), distribution.end(), t,
                               [](const auto& e, Token v) { return e.first < v; });
    return it != distribution.end() && it->first == t ? it->second : 0.0;
}

Token PredictionRecord::argmax() const {
    if (distribution.empty()) throw PredictorError("empty distribution");
    const auto* best = &distribution.front();
    for (const auto& e : distribution)
        if (e.second > best->second) best = &e;
    return best->first;
}

void PredictionRecord::validate(const Vocabulary& vocab, double tol) const {
    if (distribution.empty()) throw PredictorError("empty distribution");
    double sum = 0.0;
    for (std::size_t i = 0; i < distribution.size(); ++i) {
        const auto& [t, p] = distribution[i];
        if (!vocab.is_move(t)) throw PredictorError("distribution key is not a move token: " + std::to_string(t));
        if (i > 0 && distribution[i - 1].first >= t) throw PredictorError("distribution not sorted by token");
        if (!(p >= 0.0) || !std::isfinite(p)) throw PredictorError("negative or non-finite probability");
        sum += p;
    }
    if (std::abs(sum - 1.0) > tol) throw PredictorError("probabilities sum to " + std::to_string(sum));
}

namespace {

constexpr int kPooledSlot = 31;
constexpr int kTokenBits = 12;

std::optional<int> header_bucket(const Vocabulary& vocab, std::span<const Token> tokens) {
    for (std::size_t i = 0; i < std::min(tokens.size(), kHeaderLength); ++i)
        if (auto e = vocab.elo_of(tokens[i])) return elo_bucket(*e);
    return std::nullopt;
}

std::vector<Token> move_part(const Vocabulary& vocab, std::span<const Token> tokens) {
    std::vector<Token> out;
    out.reserve(tokens.size());
    for (Token t : tokens)
        if (vocab.is_move(t)) out.push_back(t);
    return out;
}

int slot_of(int bucket) { return (elo_bucket(bucket) - kEloBucketMin) / kEloBucketWidth; }

template <class T>
void put(std::ostream& out, T v) {
    char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    out.write(b, sizeof(T));
}

template <class T>
T get(std::istream& in) {
    char b[sizeof(T)];
    if (!in.read(b, sizeof(T))) throw std::runtime_error("truncated n-gram model file");
    T v;
    std::memcpy(&v, b, sizeof(T));
    return v;
}

constexpr char kMagic[8] = {'S', 'Q', 'N', 'G', 'R', 'A', 'M', '1'};

}  // namespace

NGramModel::NGramModel(int order, double k, const Vocabulary& vocab) : order_(order), k_(k), vocab_(&vocab) {
    if (order < 1 || order > 5) throw std::invalid_argument("n-gram order must be in [1, 5]");
    if (!(k > 0.0)) throw std::invalid_argument("smoothing k must be positive");
}

std::uint64_t NGramModel::key(int slot, std::span<const Token> window) const {
    std::uint64_t v = 0;
    for (Token t : window) v = (v << kTokenBits) | t;
    return v | (static_cast<std::uint64_t>(window.size()) << 48) | (static_cast<std::uint64_t>(slot) << 51);
}

void NGramModel::add_sequence(std::span<const Token> tokens, double weight) {
    if (!(weight >= 0.0)) throw std::invalid_argument("sequence weight must be non-negative");
    if (weight == 0.0) return;
    const auto bucket = header_bucket(*vocab_, tokens);
    const auto moves = move_part(*vocab_, tokens);
    const std::span<const Token> ms(moves);
    for (std::size_t i = 0; i < ms.size(); ++i) {
        const std::size_t max_len = std::min<std::size_t>(order_ - 1, i);
        for (std::size_t len = 0; len <= max_len; ++len) {
            const auto window = ms.subspan(i - len, len);
            for (int slot : {bucket ? slot_of(*bucket) : -1, kPooledSlot}) {
                if (slot < 0) continue;
                Node& n = table_[key(slot, window)];
                n.total += weight;
                n.next[ms[i]] += weight;
            }
        }
        total_ += weight;
    }
}

void NGramModel::merge(const NGramModel& o) {
    if (o.order_ != order_ || o.k_ != k_) throw std::invalid_argument("cannot merge n-gram models with different settings");
    for (const auto& [key, node] : o.table_) {
        Node& n = table_[key];
        n.total += node.total;
        for (const auto& [t, c] : node.next) n.next[t] += c;
    }
    total_ += o.total_;
}

double NGramModel::count(std::optional<int> bucket, std::span<const Token> window, Token next) const {
    auto it = table_.find(key(bucket ? slot_of(*bucket) : kPooledSlot, window));
    if (it == table_.end()) return 0.0;
    auto c = it->second.next.find(next);
    return c == it->second.next.end() ? 0.0 : c->second;
}

double NGramModel::mass(std::optional<int> bucket, std::span<const Token> window) const {
    auto it = table_.find(key(bucket ? slot_of(*bucket) : kPooledSlot, window));
    return it == table_.end() ? 0.0 : it->second.total;
}

const NGramModel::Node* NGramModel::lookup(std::span<const Token> context) const {
    const auto bucket = header_bucket(*vocab_, context);
    const auto moves = move_part(*vocab_, context);
    const std::span<const Token> ms(moves);
    for (std::size_t len = std::min<std::size_t>(order_ - 1, ms.size()) + 1; len-- > 0;) {
        const auto window = ms.subspan(ms.size() - len, len);
        for (int slot : {bucket ? slot_of(*bucket) : -1, kPooledSlot}) {
            if (slot < 0) continue;
            auto it = table_.find(key(slot, window));
            if (it != table_.end() && it->second.total > k_) return &it->second;
        }
    }
    return nullptr;
}

std::vector<double> NGramModel::dense(std::span<const Token> context) const {
    const std::size_t V = vocab_->move_token_count();
    const Node* n = lookup(context);
    if (!n) return std::vector<double>(V, 1.0 / static_cast<double>(V));
    const double denom = n->total + k_ * static_cast<double>(V);
    std::vector<double> p(V, k_ / denom);
    const std::size_t first = vocab_->first_move_token();
    for (const auto& [t, c] : n->next) p[t - first] = (c + k_) / denom;
    return p;
}

namespace {

PredictionRecord make_record(const NGramModel& m, std::span<const Token> context, const PredictOptions& opt) {
    PredictionRecord rec;
    rec.context.assign(context.begin(), context.end());
    const auto p = m.dense(context);
    const Token first = m.vocabulary().first_move_token();
    rec.distribution.reserve(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) rec.distribution.emplace_back(static_cast<Token>(first + i), p[i]);
    if (opt.topk > 0 && static_cast<std::size_t>(opt.topk) < rec.distribution.size()) {
        auto d = rec.distribution;
        std::stable_sort(d.begin(), d.end(), [](const auto& x, const auto& y) { return x.second > y.second; });
        d.resize(static_cast<std::size_t>(opt.topk));
        double s = 0.0;
        for (const auto& e : d) s += e.second;
        for (auto& e : d) e.second /= s;
        std::sort(d.begin(), d.end());
        rec.distribution = std::move(d);
    }
    return rec;
}

class SharedNGram : public Predictor {
public:
    explicit SharedNGram(std::shared_ptr<const NGramModel> m) : m_(std::move(m)) {}
    PredictionRecord predict(std::span<const Token> context, const PredictOptions& opt) override {
        return make_record(*m_, context, opt);
    }
    std::string name() const override { return m_->name(); }

private:
    std::shared_ptr<const NGramModel> m_;
};

}  // namespace

PredictionRecord NGramModel::predict(std::span<const Token> context, const PredictOptions& opt) {
    return make_record(*this, context, opt);
}

std::string NGramModel::name() const { return "ngram-" + std::to_string(order_); }

void NGramModel::save(std::ostream& out) const {
    out.write(kMagic, sizeof kMagic);
    put<std::int32_t>(out, order_);
    put<double>(out, k_);
    put<double>(out, total_);
    std::vector<std::uint64_t> keys;
    keys.reserve(table_.size());
    for (const auto& [k, n] : table_) keys.push_back(k);
    std::sort(keys.begin(), keys.end());
    put<std::uint64_t>(out, keys.size());
    for (auto k : keys) {
        const Node& n = table_.at(k);
        std::vector<std::pair<Token, double>> entries(n.next.begin(), n.next.end());
        std::sort(entries.begin(), entries.end());
        put<std::uint64_t>(out, k);
        put<double>(out, n.total);
        put<std::uint32_t>(out, static_cast<std::uint32_t>(entries.size()));
        for (const auto& [t, c] : entries) {
            put<std::uint16_t>(out, t);
            put<double>(out, c);
        }
    }
}

NGramModel NGramModel::load(std::istream& in, const Vocabulary& vocab) {
    char magic[sizeof kMagic];
    if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof kMagic) != 0)
        throw std::runtime_error("not an n-gram model file");
    const auto order = get<std::int32_t>(in);
    const auto k = get<double>(in);
    NGramModel m(order, k, vocab);
    m.total_ = get<double>(in);
    const auto nodes = get<std::uint64_t>(in);
    m.table_.reserve(nodes);
    for (std::uint64_t i = 0; i < nodes; ++i) {
        const auto key = get<std::uint64_t>(in);
        Node& n = m.table_[key];
        n.total = get<double>(in);
        const auto count = get<std::uint32_t>(in);
        for (std::uint32_t j = 0; j < count; ++j) {
            const auto t = get<std::uint16_t>(in);
            if (!vocab.is_move(t)) throw std::runtime_error("n-gram model references a non-move token");
            n.next[t] = get<double>(in);
        }
    }
    return m;
}

double NGramModel::sup_distance(const NGramModel& a, const NGramModel& b, std::span<const std::vector<Token>> contexts) {
    double worst = 0.0;
    for (const auto& c : contexts) {
        const auto pa = a.dense(c), pb = b.dense(c);
        for (std::size_t i = 0; i < pa.size(); ++i) worst = std::max(worst, std::abs(pa[i] - pb[i]));
    }
    return worst;
}

PredictorFactory shared_ngram_factory(std::shared_ptr<const NGramModel> model) {
    return [model] { return std::unique_ptr<Predictor>(new SharedNGram(model)); };
}

NGramModel train_ngram(std::span<const GameRecord> games, const WeightScheme& scheme, int order, double k) {
    NGramModel m(order, k);
    const Vocabulary& v = standard_vocabulary();
    std::size_t used = 0;
    for (const auto& g : games) {
        if (g.white_elo <= 0 || g.black_elo <= 0) continue;
        const double w = weight(scheme, g.average_elo());
        const auto [ws, bs] = build_sequences(v, g);
        m.add_sequence(ws.tokens, w);
        m.add_sequence(bs.tokens, w);
        ++used;
    }
    if (used == 0) throw std::invalid_argument("train_ngram: empty corpus");
    return m;
}

NGramModel train_ngram(std::span<const TokenSequence> seqs, std::span<const double> weights, int order, double k) {
    if (seqs.empty()) throw std::invalid_argument("train_ngram: empty corpus");
    if (seqs.size() != weights.size()) throw std::invalid_argument("train_ngram: weights not aligned with sequences");
    NGramModel m(order, k);
    for (std::size_t i = 0; i < seqs.size(); ++i) m.add_sequence(seqs[i].tokens, weights[i]);
    return m;
}

namespace {

bool contains(std::span<const Token> legal, Token t) { return std::find(legal.begin(), legal.end(), t) != legal.end(); }

// Index into `entries` drawn proportional to p^(1/t), restricted by `keep`.
template <class Keep>
std::optional<std::size_t> draw(const std::vector<std::pair<Token, double>>& entries, double temperature, Rng& rng,
                                Keep keep) {
    double pmax = 0.0;
    for (const auto& [t, p] : entries)
        if (keep(t)) pmax = std::max(pmax, p);
    if (!(pmax > 0.0)) return std::nullopt;
    if (temperature == 0.0) {
        for (std::size_t i = 0; i < entries.size(); ++i)
            if (keep(entries[i].first) && entries[i].second == pmax) return i;
    }
    const bool flat = std::isinf(temperature);
    std::vector<double> w(entries.size(), 0.0);
    double total = 0.0;
    for (std::size_t i = 0; i < entries.size(); ++i) {
        const double p = entries[i].second;
        if (!keep(entries[i].first) || !(p > 0.0)) continue;
        w[i] = flat ? 1.0 : std::exp((std::log(p) - std::log(pmax)) / temperature);
        total += w[i];
    }
    double u = rng.uniform() * total;
    std::size_t last = 0;
    for (std::size_t i = 0; i < w.size(); ++i) {
        if (w[i] <= 0.0) continue;
        last = i;
        if (u < w[i]) return i;
        u -= w[i];
    }
    return last;
}

}  // namespace

SampleResult sample_move(const PredictionRecord& rec, double temperature, Rng& rng, std::span<const Token> legal,
                         bool mask) {
    if (!(temperature >= 0.0)) throw std::invalid_argument("temperature must be >= 0");
    const auto raw = draw(rec.distribution, temperature, rng, [](Token) { return true; });
    if (!raw) throw PredictorError("distribution has no mass");
    SampleResult r;
    r.raw = r.token = rec.distribution[*raw].first;
    r.raw_illegal = !legal.empty() && !contains(legal, r.raw);
    if (r.raw_illegal && mask) {
        const auto fixed = draw(rec.distribution, temperature, rng, [&](Token t) { return contains(legal, t); });
        if (!fixed) throw PredictorError("no probability mass on legal moves");
        r.token = rec.distribution[*fixed].first;
    }
    return r;
}

std::vector<Token> legal_tokens(const Vocabulary& vocab, const chess::BoardState& state) {
    std::vector<Token> out;
    for (const auto& m : chess::legal_moves(state)) {
        auto t = vocab.move_token(m);
        if (!t) throw OutOfVocabulary("legal move outside vocabulary: " + m.uci());
        out.push_back(*t);
    }
    std::sort(out.begin(), out.end());
    return out;
}

json encode_request(const Vocabulary& vocab, std::uint64_t id, std::span<const Token> tokens, const PredictOptions& opt) {
    json toks = json::array();
    for (Token t : tokens) toks.push_back(vocab.text(t));
    return json{{"id", id}, {"tokens", toks}, {"want_hidden", opt.want_hidden}, {"topk", opt.topk}};
}

json encode_response(const Vocabulary& vocab, std::uint64_t id, const PredictionRecord& rec) {
    json probs = json::object();
    for (const auto& [t, p] : rec.distribution) probs[vocab.text(t)] = p;
    json j{{"id", id}, {"probs", probs}};
    if (!rec.hidden.empty()) {
        json h = json::array();
        for (const auto& s : rec.hidden) h.push_back(json{{"layer", s.layer}, {"vec", s.vec}});
        j["hidden"] = h;
    }
    return j;
}

PredictionRecord decode_response(const Vocabulary& vocab, const json& j, std::uint64_t expect_id, const PredictOptions& opt) {
    if (!j.is_object()) throw PredictorError("response is not an object");
    if (j.contains("error")) throw PredictorError("predictor reported error: " + j["error"].dump());
    if (!j.contains("id") || !j["id"].is_number_unsigned() || j["id"].get<std::uint64_t>() != expect_id)
        throw PredictorError("response id mismatch");
    if (!j.contains("probs") || !j["probs"].is_object()) throw PredictorError("response lacks probs object");
    PredictionRecord rec;
    for (const auto& [k, v] : j["probs"].items()) {
        const auto t = vocab.find(k);
        if (!t || !vocab.is_move(*t)) throw PredictorError("probs key is not a move token: '" + k + "'");
        if (!v.is_number()) throw PredictorError("probability for '" + k + "' is not a number");
        rec.distribution.emplace_back(*t, v.get<double>());
    }
    std::sort(rec.distribution.begin(), rec.distribution.end());
    if (opt.topk > 0) {
        double s = 0.0;
        for (const auto& [t, p] : rec.distribution) {
            if (!(p >= 0.0)) throw PredictorError("negative probability");
            s += p;
        }
        if (!(s > 0.0) || s > 1.0 + 1e-6) throw PredictorError("top-k probabilities sum to " + std::to_string(s));
        if (s != 1.0)
            for (auto& e : rec.distribution) e.second /= s;
    }
    rec.validate(vocab);
    if (j.contains("hidden")) {
        if (!j["hidden"].is_array()) throw PredictorError("hidden must be an array");
        for (const auto& h : j["hidden"]) {
            if (!h.is_object() || !h.contains("layer") || !h.contains("vec") || !h["vec"].is_array())
                throw PredictorError("malformed hidden entry");
            HiddenState s;
            s.layer = h["layer"].get<int>();
            for (const auto& x : h["vec"]) {
                if (!x.is_number()) throw PredictorError("hidden vector holds a non-number");
                s.vec.push_back(x.get<float>());
            }
            rec.hidden.push_back(std::move(s));
        }
    }
    return rec;
}

struct ExternalPredictor::Impl {
    ChildProcess proc;
    explicit Impl(const ExternalPredictorConfig& c) : proc(c.argv, c.env) {}
};

ExternalPredictor::ExternalPredictor(ExternalPredictorConfig cfg, const Vocabulary& vocab)
    : vocab_(&vocab), cfg_(std::move(cfg)) {
    try {
        impl_ = std::make_unique<Impl>(cfg_);
    } catch (const ProcessError& e) {
        throw PredictorError(e.what());
    }
    std::optional<std::string> line;
    try {
        line = impl_->proc.read_line(cfg_.timeout);
    } catch (const ProcessError& e) {
        fail(std::string("handshake: ") + e.what());
    }
    if (!line) fail("handshake timed out");
    json h;
    try {
        h = json::parse(*line);
    } catch (const json::exception&) {
        fail("handshake is not JSON: " + line->substr(0, 200));
    }
    if (!h.is_object() || h.value("protocol", 0) != 1) fail("unsupported handshake: " + line->substr(0, 200));
    name_ = h.value("name", std::string("external"));
    layers_ = h.value("layers", 0);
}

ExternalPredictor::~ExternalPredictor() = default;

void ExternalPredictor::fail(const std::string& why) {
    failure_ = why;
    if (impl_) impl_->proc.terminate();
    throw PredictorError("predictor session failed: " + why);
}

PredictionRecord ExternalPredictor::predict(std::span<const Token> context, const PredictOptions& opt) {
    if (failed()) throw PredictorError("predictor session failed: " + failure_);
    const std::uint64_t id = next_id_++;
    const auto start = std::chrono::steady_clock::now();
    std::optional<std::string> line;
    try {
        impl_->proc.write_line(encode_request(*vocab_, id, context, opt).dump());
        line = impl_->proc.read_line(cfg_.timeout);
    } catch (const ProcessError& e) {
        fail(e.what());
    }
    if (!line) fail("response timed out");
    PredictionRecord rec;
    try {
        rec = decode_response(*vocab_, json::parse(*line), id, opt);
    } catch (const json::exception&) {
        fail("response is not JSON: " + line->substr(0, 200));
    } catch (const PredictorError& e) {
        fail(e.what());
    }
    rec.context.assign(context.begin(), context.end());
    rec.latency_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    return rec;
}

}  // namespace seqchess
