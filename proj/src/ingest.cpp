#include "seqchess/ingest.h"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>

namespace seqchess {

using chess::Color;
using chess::Move;
using chess::PieceKind;
using nlohmann::json;

namespace {

constexpr int kEloBucketCount = (kEloBucketMax - kEloBucketMin) / kEloBucketWidth + 1;
constexpr Token kFirstEloToken = 4;
constexpr Token kWhiteToken = kFirstEloToken + kEloBucketCount;

std::size_t move_slot(const Move& m) {
    const std::size_t promo = m.promotion ? static_cast<std::size_t>(*m.promotion) : 0;  // Knight=1..Queen=4
    return (static_cast<std::size_t>(m.from) * 64 + m.to) * 5 + promo;
}

bool geometric(int from, int to) {
    const int df = std::abs((to & 7) - (from & 7));
    const int dr = std::abs((to >> 3) - (from >> 3));
    if (from == to) return false;
    const bool queen = df == 0 || dr == 0 || df == dr;
    const bool knight = (df == 1 && dr == 2) || (df == 2 && dr == 1);
    return queen || knight;
}

std::optional<int> parse_int(std::string_view s) {
    int v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size()) return std::nullopt;
    return v;
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

bool parse_tag(std::string_view line, std::string& key, std::string& value) {
    line = trim(line);
    if (line.size() < 4 || line.front() != '[' || line.back() != ']') return false;
    line = line.substr(1, line.size() - 2);
    const auto space = line.find(' ');
    if (space == std::string_view::npos || space == 0) return false;
    key = std::string(line.substr(0, space));
    auto rest = trim(line.substr(space + 1));
    if (rest.size() < 2 || rest.front() != '"' || rest.back() != '"') return false;
    value.clear();
    for (std::size_t i = 1; i + 1 < rest.size(); ++i) {
        if (rest[i] == '\\' && i + 2 < rest.size()) ++i;
        value += rest[i];
    }
    return true;
}

bool is_result_token(std::string_view t) { return t == "1-0" || t == "0-1" || t == "1/2-1/2" || t == "*"; }

// Extracts "[%cpl N]" from a comment body.
std::optional<double> cpl_annotation(std::string_view comment) {
    const auto at = comment.find("[%cpl");
    if (at == std::string_view::npos) return std::nullopt;
    auto rest = comment.substr(at + 5);
    const auto close = rest.find(']');
    if (close == std::string_view::npos) return std::nullopt;
    const auto num = trim(rest.substr(0, close));
    double v = 0;
    auto [p, ec] = std::from_chars(num.data(), num.data() + num.size(), v);
    if (ec != std::errc{} || p != num.data() + num.size()) return std::nullopt;
    return v;
}

}  // namespace

const char* to_string(TimeControl tc) {
    switch (tc) {
        case TimeControl::Bullet: return "bullet";
        case TimeControl::Blitz: return "blitz";
        case TimeControl::Other: return "other";
    }
    return "other";
}

const char* to_string(GameResult r) {
    switch (r) {
        case GameResult::WhiteWin: return "1-0";
        case GameResult::BlackWin: return "0-1";
        case GameResult::Draw: return "1/2-1/2";
        case GameResult::Unknown: return "*";
    }
    return "*";
}

TimeControl time_control_from_string(std::string_view s) {
    if (s == "bullet") return TimeControl::Bullet;
    if (s == "blitz") return TimeControl::Blitz;
    return TimeControl::Other;
}

GameResult result_from_string(std::string_view s) {
    if (s == "1-0") return GameResult::WhiteWin;
    if (s == "0-1") return GameResult::BlackWin;
    if (s == "1/2-1/2") return GameResult::Draw;
    return GameResult::Unknown;
}

TimeControl classify_time_control(std::string_view tag) {
    const auto plus = tag.find('+');
    const auto base = parse_int(tag.substr(0, plus));
    if (!base || *base < 0) return TimeControl::Other;
    if (*base < 180) return TimeControl::Bullet;
    if (*base <= 600) return TimeControl::Blitz;
    return TimeControl::Other;
}

int elo_bucket(int elo) {
    const int clamped = std::clamp(elo, kEloBucketMin, kEloBucketMax);
    return clamped - (clamped - kEloBucketMin) % kEloBucketWidth;
}

// ---------------------------------------------------------------- vocabulary

Vocabulary build_vocabulary() {
    Vocabulary v;
    v.strings_ = {"[PAD]", "[BOS]", "[bullet]", "[blitz]"};
    for (int e = kEloBucketMin; e <= kEloBucketMax; e += kEloBucketWidth) v.strings_.push_back("[elo_" + std::to_string(e) + "]");
    v.strings_.push_back("[white]");
    v.strings_.push_back("[black]");
    v.first_move_ = v.strings_.size();

    std::vector<Move> moves;
    for (int from = 0; from < 64; ++from)
        for (int to = 0; to < 64; ++to)
            if (geometric(from, to)) moves.push_back(Move{static_cast<chess::Square>(from), static_cast<chess::Square>(to), std::nullopt});
    for (int from = 0; from < 64; ++from) {
        const int rank = from >> 3;
        if (rank != 6 && rank != 1) continue;
        const int target_rank = rank == 6 ? 7 : 0;
        for (int df = -1; df <= 1; ++df) {
            const int f = (from & 7) + df;
            if (f < 0 || f > 7) continue;
            for (auto k : {PieceKind::Knight, PieceKind::Bishop, PieceKind::Rook, PieceKind::Queen})
                moves.push_back(Move{static_cast<chess::Square>(from), chess::make_square(f, target_rank), k});
        }
    }
    std::sort(moves.begin(), moves.end());
    for (const auto& m : moves) v.strings_.push_back(m.uci());
    v.index();
    return v;
}

void Vocabulary::index() {
    lookup_.clear();
    for (std::size_t i = 0; i < strings_.size(); ++i) {
        if (!lookup_.emplace(strings_[i], static_cast<Token>(i)).second)
            throw std::invalid_argument("vocabulary has duplicate token '" + strings_[i] + "'");
    }
    move_index_.assign(64 * 64 * 5, 0);
    moves_.assign(strings_.size(), Move{});
    first_move_ = strings_.size();
    for (std::size_t i = 0; i < strings_.size(); ++i) {
        const auto& s = strings_[i];
        if (s.empty() || s.front() == '[') continue;
        first_move_ = std::min(first_move_, i);
        const Move m = chess::parse_uci_move(s);
        moves_[i] = m;
        move_index_[move_slot(m)] = static_cast<Token>(i);
    }
}

std::optional<Token> Vocabulary::find(std::string_view s) const {
    auto it = lookup_.find(s);
    if (it == lookup_.end()) return std::nullopt;
    return it->second;
}

Token Vocabulary::time_control(TimeControl tc) const { return tc == TimeControl::Bullet ? 2 : 3; }

Token Vocabulary::elo(int e) const {
    return static_cast<Token>(kFirstEloToken + (elo_bucket(e) - kEloBucketMin) / kEloBucketWidth);
}

Token Vocabulary::color(Color c) const { return c == Color::White ? kWhiteToken : kWhiteToken + 1; }

std::optional<Token> Vocabulary::move_token(const Move& m) const {
    const Token t = move_index_[move_slot(m)];
    if (t == 0) return std::nullopt;
    return t;
}

Move Vocabulary::move_of(Token t) const {
    if (!is_move(t)) throw std::out_of_range("token " + std::to_string(t) + " is not a move token");
    return moves_[t];
}

std::optional<TimeControl> Vocabulary::time_control_of(Token t) const {
    if (t == 2) return TimeControl::Bullet;
    if (t == 3) return TimeControl::Blitz;
    return std::nullopt;
}

std::optional<int> Vocabulary::elo_of(Token t) const {
    if (t < kFirstEloToken || t >= kWhiteToken) return std::nullopt;
    return kEloBucketMin + (t - kFirstEloToken) * kEloBucketWidth;
}

std::optional<Color> Vocabulary::color_of(Token t) const {
    if (t == kWhiteToken) return Color::White;
    if (t == kWhiteToken + 1) return Color::Black;
    return std::nullopt;
}

json Vocabulary::to_json() const {
    return json{{"tokens", strings_},
                {"size", size()},
                {"move_tokens", move_token_count()},
                {"special_tokens", special_token_count()}};
}

Vocabulary Vocabulary::from_json(const json& j) {
    Vocabulary v;
    v.strings_ = j.at("tokens").get<std::vector<std::string>>();
    if (v.strings_.size() > 65535) throw std::invalid_argument("vocabulary too large for u16 tokens");
    v.index();
    if (v.strings_.size() <= kWhiteToken + 1 || v.strings_[1] != "[BOS]")
        throw std::invalid_argument("vocabulary special-token layout not recognised");
    return v;
}

const Vocabulary& standard_vocabulary() {
    static const Vocabulary v = build_vocabulary();
    return v;
}

// ---------------------------------------------------------------- sequences

TokenSequence encode(const Vocabulary& vocab, std::span<const Move> moves, const SequenceHeader& header) {
    TokenSequence seq;
    seq.elo = header.elo;
    seq.color = header.color;
    seq.tokens.reserve(kHeaderLength + moves.size());
    seq.tokens.push_back(vocab.bos());
    seq.tokens.push_back(vocab.time_control(header.time_control));
    seq.tokens.push_back(vocab.elo(header.elo));
    seq.tokens.push_back(vocab.color(header.color));
    for (const auto& m : moves) {
        const auto t = vocab.move_token(m);
        if (!t) throw OutOfVocabulary("move '" + m.uci() + "' is not in the vocabulary");
        seq.tokens.push_back(*t);
    }
    return seq;
}

Decoded decode(const Vocabulary& vocab, const TokenSequence& seq) { return decode(vocab, std::span<const Token>(seq.tokens)); }

Decoded decode(const Vocabulary& vocab, std::span<const Token> tokens) {
    if (tokens.size() < kHeaderLength || tokens[0] != vocab.bos())
        throw std::invalid_argument("token sequence lacks the 4-token header");
    const auto tc = vocab.time_control_of(tokens[1]);
    const auto elo = vocab.elo_of(tokens[2]);
    const auto color = vocab.color_of(tokens[3]);
    if (!tc || !elo || !color) throw std::invalid_argument("malformed sequence header");
    Decoded d;
    d.header = SequenceHeader{*tc, *elo, *color};
    for (std::size_t i = kHeaderLength; i < tokens.size(); ++i) {
        if (tokens[i] == vocab.pad()) break;
        d.moves.push_back(vocab.move_of(tokens[i]));
    }
    return d;
}

std::pair<TokenSequence, TokenSequence> build_sequences(const Vocabulary& vocab, const GameRecord& g) {
    const std::size_t keep = std::min(g.moves.size(), kMaxSequenceLength - kHeaderLength);
    const std::span<const Move> moves(g.moves.data(), keep);
    const TimeControl tc = g.time_control == TimeControl::Bullet ? TimeControl::Bullet : TimeControl::Blitz;
    return {encode(vocab, moves, SequenceHeader{tc, g.white_elo, Color::White}),
            encode(vocab, moves, SequenceHeader{tc, g.black_elo, Color::Black})};
}

TokenSequence context_for(const Vocabulary& vocab, const GameRecord& g, std::size_t ply, Color color) {
    const TimeControl tc = g.time_control == TimeControl::Bullet ? TimeControl::Bullet : TimeControl::Blitz;
    return encode(vocab, std::span<const Move>(g.moves.data(), std::min(ply, g.moves.size())),
                  SequenceHeader{tc, g.elo_of(color), color});
}

// ---------------------------------------------------------------- PGN

std::uint64_t SkipCounters::total_skipped() const {
    std::uint64_t t = 0;
    for (const auto& [k, v] : counts) t += v;
    return t;
}

void SkipCounters::merge(const SkipCounters& o) {
    parsed += o.parsed;
    for (const auto& [k, v] : o.counts) counts[k] += v;
}

json SkipCounters::to_json() const {
    json skipped = json::object();
    for (const auto& [k, v] : counts) skipped[k] = v;
    return json{{"parsed", parsed}, {"skipped", skipped}, {"skipped_total", total_skipped()}};
}

bool PgnReader::read_raw_game(std::vector<std::string>& tags, std::string& movetext) {
    tags.clear();
    movetext.clear();
    std::string line;
    bool in_moves = false;
    bool any = false;
    while (true) {
        if (has_pending_) {
            line = std::move(pending_);
            has_pending_ = false;
        } else if (!std::getline(in_, line)) {
            if (in_.bad()) throw std::runtime_error("I/O error while reading PGN stream");
            break;
        }
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const auto t = trim(line);
        if (t.empty()) continue;
        if (t.front() == '[') {
            if (in_moves) {
                pending_ = line;
                has_pending_ = true;
                break;
            }
            tags.push_back(std::string(t));
            any = true;
        } else if (t.front() == '%') {
            continue;  // escape line
        } else {
            in_moves = true;
            any = true;
            movetext += line;
            movetext += '\n';
        }
    }
    return any;
}

std::optional<GameRecord> PgnReader::next() {
    std::vector<std::string> tags;
    std::string movetext;
    while (read_raw_game(tags, movetext)) {
        ++index_;
        if (auto g = build(tags, movetext)) {
            ++skips_.parsed;
            return g;
        }
    }
    return std::nullopt;
}

std::optional<GameRecord> PgnReader::build(const std::vector<std::string>& tags, const std::string& movetext) {
    std::map<std::string, std::string> tag;
    for (const auto& line : tags) {
        std::string k, v;
        if (!parse_tag(line, k, v)) {
            skips_.add("bad_tags");
            return std::nullopt;
        }
        tag[k] = v;
    }
    if (tags.empty()) {
        skips_.add("bad_tags");
        return std::nullopt;
    }
    if (tag.count("FEN") || (tag.count("SetUp") && tag["SetUp"] == "1")) {
        skips_.add("custom_start");
        return std::nullopt;
    }

    GameRecord g;
    for (auto [key, dest] : {std::pair{"WhiteElo", &g.white_elo}, std::pair{"BlackElo", &g.black_elo}}) {
        auto it = tag.find(key);
        if (it == tag.end() || it->second.empty() || it->second == "?") {
            skips_.add("missing_elo");
            return std::nullopt;
        }
        const auto v = parse_int(it->second);
        if (!v || *v < 0 || *v > 4000) {
            skips_.add("bad_elo");
            return std::nullopt;
        }
        *dest = *v;
    }
    g.time_control = tag.count("TimeControl") ? classify_time_control(tag["TimeControl"]) : TimeControl::Other;
    g.result = tag.count("Result") ? result_from_string(tag["Result"]) : GameResult::Unknown;
    if (auto it = tag.find("Site"); it != tag.end() && !it->second.empty() && it->second != "?") {
        g.id = it->second;
    } else {
        g.id = "game-" + std::to_string(index_);
    }
    if (auto it = tag.find("Source"); it != tag.end() && !it->second.empty()) g.source = it->second;

    chess::BoardState state = chess::BoardState::initial();
    std::vector<std::optional<double>> annotations;
    std::size_t i = 0;
    const std::size_t n = movetext.size();
    int depth = 0;
    while (i < n) {
        const char c = movetext[i];
        if (std::isspace(static_cast<unsigned char>(c))) {
            ++i;
            continue;
        }
        if (c == '{') {
            const auto close = movetext.find('}', i);
            if (close == std::string::npos) {
                skips_.add("unparsable");
                return std::nullopt;
            }
            if (depth == 0 && !g.moves.empty()) {
                if (auto v = cpl_annotation(std::string_view(movetext).substr(i + 1, close - i - 1)))
                    annotations[g.moves.size() - 1] = v;
            }
            i = close + 1;
            continue;
        }
        if (c == ';') {
            const auto eol = movetext.find('\n', i);
            i = eol == std::string::npos ? n : eol + 1;
            continue;
        }
        if (c == '(') {
            ++depth;
            ++i;
            continue;
        }
        if (c == ')') {
            if (depth == 0) {
                skips_.add("unparsable");
                return std::nullopt;
            }
            --depth;
            ++i;
            continue;
        }
        std::size_t j = i;
        while (j < n && !std::isspace(static_cast<unsigned char>(movetext[j])) && movetext[j] != '{' &&
               movetext[j] != '(' && movetext[j] != ')' && movetext[j] != ';')
            ++j;
        std::string_view tok(movetext.data() + i, j - i);
        i = j;
        if (depth > 0) continue;
        if (tok.front() == '$') continue;
        if (is_result_token(tok)) break;
        // Strip a leading move number such as "12." or "12...".
        std::size_t k = 0;
        while (k < tok.size() && std::isdigit(static_cast<unsigned char>(tok[k]))) ++k;
        if (k > 0 && k < tok.size() && tok[k] == '.') {
            while (k < tok.size() && tok[k] == '.') ++k;
            tok.remove_prefix(k);
        } else if (k == tok.size()) {
            continue;  // bare move number
        }
        if (tok.empty()) continue;
        try {
            const Move m = chess::parse_san(state, tok);
            state = state.after(m);
            g.moves.push_back(m);
            annotations.emplace_back();
        } catch (const chess::ParseError&) {
            skips_.add("unparsable");
            return std::nullopt;
        } catch (const chess::IllegalMoveError&) {
            skips_.add("illegal");
            return std::nullopt;
        }
    }
    if (depth != 0) {
        skips_.add("unparsable");
        return std::nullopt;
    }
    if (g.moves.empty()) {
        skips_.add("no_moves");
        return std::nullopt;
    }
    if (std::all_of(annotations.begin(), annotations.end(), [](const auto& a) { return a.has_value(); })) {
        for (const auto& a : annotations) g.cpl.push_back(*a);
    }
    return g;
}

std::vector<GameRecord> parse_pgn(std::istream& in, SkipCounters* skips) {
    PgnReader reader(in);
    std::vector<GameRecord> out;
    while (auto g = reader.next()) out.push_back(std::move(*g));
    if (skips) skips->merge(reader.skips());
    return out;
}

void write_pgn(std::ostream& out, const GameRecord& g, const std::map<std::string, std::string>& extra_tags) {
    auto tag = [&](const std::string& k, const std::string& v) { out << '[' << k << " \"" << v << "\"]\n"; };
    tag("Event", "seqchess");
    tag("Site", g.id);
    tag("White", "white");
    tag("Black", "black");
    tag("Result", to_string(g.result));
    tag("WhiteElo", std::to_string(g.white_elo));
    tag("BlackElo", std::to_string(g.black_elo));
    tag("TimeControl", g.time_control == TimeControl::Bullet ? "60+0" : g.time_control == TimeControl::Blitz ? "300+0" : "-");
    if (g.source != "lichess") tag("Source", g.source);
    for (const auto& [k, v] : extra_tags) tag(k, v);
    out << '\n';

    chess::BoardState s = chess::BoardState::initial();
    std::size_t col = 0;
    auto emit = [&](const std::string& word) {
        if (col + word.size() + 1 > 79 && col > 0) {
            out << '\n';
            col = 0;
        } else if (col > 0) {
            out << ' ';
            ++col;
        }
        out << word;
        col += word.size();
    };
    for (std::size_t i = 0; i < g.moves.size(); ++i) {
        if (i % 2 == 0) emit(std::to_string(i / 2 + 1) + ".");
        emit(chess::to_san(s, g.moves[i]));
        if (g.cpl.size() == g.moves.size()) {
            std::ostringstream c;
            c << "{ [%cpl " << g.cpl[i] << "] }";
            emit(c.str());
        }
        s = s.after(g.moves[i]);
    }
    emit(to_string(g.result));
    out << "\n\n";
}

// ---------------------------------------------------------------- corpus files

json to_json(const GameRecord& g) {
    std::vector<std::string> moves;
    moves.reserve(g.moves.size());
    for (const auto& m : g.moves) moves.push_back(m.uci());
    json j{{"id", g.id},
           {"source", g.source},
           {"white_elo", g.white_elo},
           {"black_elo", g.black_elo},
           {"time_control", to_string(g.time_control)},
           {"result", to_string(g.result)},
           {"moves", moves}};
    if (!g.cpl.empty()) j["cpl"] = g.cpl;
    return j;
}

GameRecord game_from_json(const json& j) {
    GameRecord g;
    g.id = j.at("id").get<std::string>();
    g.source = j.value("source", std::string("lichess"));
    g.white_elo = j.at("white_elo").get<int>();
    g.black_elo = j.at("black_elo").get<int>();
    g.time_control = time_control_from_string(j.value("time_control", std::string("other")));
    g.result = result_from_string(j.value("result", std::string("*")));
    for (const auto& m : j.at("moves")) g.moves.push_back(chess::parse_uci_move(m.get<std::string>()));
    if (j.contains("cpl")) g.cpl = j.at("cpl").get<std::vector<double>>();
    return g;
}

void write_corpus_jsonl(std::ostream& out, std::span<const GameRecord> games) {
    for (const auto& g : games) out << to_json(g).dump() << '\n';
}

std::vector<GameRecord> read_corpus_jsonl(std::istream& in) {
    std::vector<GameRecord> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        try {
            out.push_back(game_from_json(json::parse(line)));
        } catch (const std::exception& e) {
            throw std::runtime_error("corpus line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

void write_token_file(std::ostream& out, std::span<const TokenSequence> seqs) {
    auto put16 = [&](std::uint16_t v) {
        const char b[2] = {static_cast<char>(v & 0xFF), static_cast<char>(v >> 8)};
        out.write(b, 2);
    };
    for (const auto& s : seqs) {
        if (s.tokens.size() > 0xFFFF) throw std::length_error("sequence too long for token file");
        put16(static_cast<std::uint16_t>(s.tokens.size()));
        for (Token t : s.tokens) put16(t);
    }
}

std::vector<std::vector<Token>> read_token_file(std::istream& in) {
    std::vector<std::vector<Token>> out;
    auto get16 = [&](std::uint16_t& v) {
        unsigned char b[2];
        if (!in.read(reinterpret_cast<char*>(b), 2)) return false;
        v = static_cast<std::uint16_t>(b[0] | (b[1] << 8));
        return true;
    };
    std::uint16_t len;
    while (get16(len)) {
        std::vector<Token> rec(len);
        for (auto& t : rec)
            if (!get16(t)) throw std::runtime_error("token file truncated inside a record");
        out.push_back(std::move(rec));
    }
    return out;
}

LengthStats length_stats(std::span<const GameRecord> games) {
    LengthStats s;
    std::vector<std::size_t> lengths;
    for (const auto& g : games) {
        const std::size_t len = kHeaderLength + g.moves.size();
        for (int c = 0; c < 2; ++c) {
            lengths.push_back(len);
            ++s.sequences;
            if (len > kMaxSequenceLength) ++s.truncated;
        }
        s.max_length = std::max(s.max_length, len);
    }
    if (!lengths.empty()) {
        std::sort(lengths.begin(), lengths.end());
        const auto idx = static_cast<std::size_t>(std::ceil(0.995 * static_cast<double>(lengths.size()))) - 1;
        s.p995_length = static_cast<double>(lengths[std::min(idx, lengths.size() - 1)]);
    }
    return s;
}

}  // namespace seqchess
