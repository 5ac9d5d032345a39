#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "seqchess/chess.h"

namespace seqchess {

using Token = std::uint16_t;

constexpr std::size_t kHeaderLength = 4;
constexpr std::size_t kMaxSequenceLength = 170;
constexpr int kEloBucketWidth = 100;
constexpr int kEloBucketMin = 600;
constexpr int kEloBucketMax = 2900;

enum class TimeControl : std::uint8_t { Bullet, Blitz, Other };
enum class GameResult : std::uint8_t { WhiteWin, BlackWin, Draw, Unknown };

const char* to_string(TimeControl tc);
const char* to_string(GameResult r);
TimeControl time_control_from_string(std::string_view s);
GameResult result_from_string(std::string_view s);

/// Lichess "base+increment" grammar: base < 180 s is bullet, 180..600 s blitz.
TimeControl classify_time_control(std::string_view tag);

/// Lower edge of the 100-point bucket, clamped to [600, 2900].
int elo_bucket(int elo);

struct GameRecord {
    std::string id;
    std::string source = "lichess";
    std::vector<chess::Move> moves;
    int white_elo = 0;
    int black_elo = 0;
    TimeControl time_control = TimeControl::Other;
    GameResult result = GameResult::Unknown;
    /// Optional per-ply centipawn loss annotations; empty or one per move.
    std::vector<double> cpl;

    double average_elo() const { return 0.5 * (white_elo + black_elo); }
    int elo_of(chess::Color c) const { return c == chess::Color::White ? white_elo : black_elo; }
};

struct SequenceHeader {
    TimeControl time_control = TimeControl::Blitz;
    int elo = 1500;  // decoded sequences carry the bucket's lower edge
    chess::Color color = chess::Color::White;

    bool operator==(const SequenceHeader&) const = default;
};

struct TokenSequence {
    std::vector<Token> tokens;
    std::size_t header_length = kHeaderLength;
    int elo = 0;
    chess::Color color = chess::Color::White;

    std::size_t move_count() const { return tokens.size() - header_length; }
};

class OutOfVocabulary : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Token <-> string bijection: special tokens first, then every geometric UCI
/// move (queen rays, knight jumps, pawn promotions) in (from, to, piece) order.
class Vocabulary {
public:
    std::size_t size() const { return strings_.size(); }
    std::size_t move_token_count() const { return size() - first_move_; }
    std::size_t special_token_count() const { return first_move_; }

    const std::string& text(Token t) const { return strings_.at(t); }
    std::optional<Token> find(std::string_view s) const;

    Token pad() const { return 0; }
    Token bos() const { return 1; }
    Token time_control(TimeControl tc) const;
    Token elo(int elo) const;
    Token color(chess::Color c) const;

    bool is_move(Token t) const { return t >= first_move_ && t < size(); }
    Token first_move_token() const { return static_cast<Token>(first_move_); }
    std::optional<Token> move_token(const chess::Move& m) const;
    chess::Move move_of(Token t) const;

    /// Header values from special tokens; nullopt if `t` is not of that kind.
    std::optional<TimeControl> time_control_of(Token t) const;
    std::optional<int> elo_of(Token t) const;
    std::optional<chess::Color> color_of(Token t) const;

    nlohmann::json to_json() const;
    static Vocabulary from_json(const nlohmann::json& j);

    bool operator==(const Vocabulary& o) const { return strings_ == o.strings_; }

private:
    friend Vocabulary build_vocabulary();
    void index();

    std::vector<std::string> strings_;
    std::size_t first_move_ = 0;
    std::map<std::string, Token, std::less<>> lookup_;
    std::vector<Token> move_index_;  // [from][to][promotion 0..4], 0 = absent
    std::vector<chess::Move> moves_;
};

Vocabulary build_vocabulary();
/// Process-wide instance of build_vocabulary().
const Vocabulary& standard_vocabulary();

TokenSequence encode(const Vocabulary& vocab, std::span<const chess::Move> moves, const SequenceHeader& header);

struct Decoded {
    std::vector<chess::Move> moves;
    SequenceHeader header;
};
Decoded decode(const Vocabulary& vocab, const TokenSequence& seq);
Decoded decode(const Vocabulary& vocab, std::span<const Token> tokens);

/// Both colors' training sequences for one game, truncated to 170 tokens.
/// Other time controls reuse the blitz token.
std::pair<TokenSequence, TokenSequence> build_sequences(const Vocabulary& vocab, const GameRecord& g);

/// Header plus the first `ply` moves, seen from `color`'s side.
TokenSequence context_for(const Vocabulary& vocab, const GameRecord& g, std::size_t ply, chess::Color color);

struct SkipCounters {
    std::map<std::string, std::uint64_t> counts;
    std::uint64_t parsed = 0;

    void add(const std::string& why) { ++counts[why]; }
    std::uint64_t total_skipped() const;
    void merge(const SkipCounters& o);
    nlohmann::json to_json() const;
};

/// Streaming PGN reader; yields games whose movetext replays legally.
class PgnReader {
public:
    explicit PgnReader(std::istream& in) : in_(in) {}

    std::optional<GameRecord> next();
    const SkipCounters& skips() const { return skips_; }

private:
    bool read_raw_game(std::vector<std::string>& tags, std::string& movetext);
    std::optional<GameRecord> build(const std::vector<std::string>& tags, const std::string& movetext);

    std::istream& in_;
    SkipCounters skips_;
    std::string pending_;
    bool has_pending_ = false;
    std::uint64_t index_ = 0;
};

std::vector<GameRecord> parse_pgn(std::istream& in, SkipCounters* skips = nullptr);

/// Writes one game as PGN (SAN movetext, Seven Tag Roster plus Elo/TimeControl).
void write_pgn(std::ostream& out, const GameRecord& g, const std::map<std::string, std::string>& extra_tags = {});

nlohmann::json to_json(const GameRecord& g);
GameRecord game_from_json(const nlohmann::json& j);

void write_corpus_jsonl(std::ostream& out, std::span<const GameRecord> games);
std::vector<GameRecord> read_corpus_jsonl(std::istream& in);

/// Token file: per record, little-endian u16 length then that many u16 tokens.
void write_token_file(std::ostream& out, std::span<const TokenSequence> seqs);
std::vector<std::vector<Token>> read_token_file(std::istream& in);

struct LengthStats {
    std::uint64_t sequences = 0;
    std::uint64_t truncated = 0;
    double p995_length = 0;  // untruncated encoded length
    std::size_t max_length = 0;
};
LengthStats length_stats(std::span<const GameRecord> games);

}  // namespace seqchess
