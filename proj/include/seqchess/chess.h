#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace seqchess::chess {

/// Square index, a1 = 0, b1 = 1, ..., h8 = 63.
using Square = std::uint8_t;

constexpr int file_of(Square sq) { return sq & 7; }
constexpr int rank_of(Square sq) { return sq >> 3; }
constexpr Square make_square(int file, int rank) { return static_cast<Square>(rank * 8 + file); }
std::string square_name(Square sq);

enum class Color : std::uint8_t { White = 0, Black = 1 };
constexpr Color operator!(Color c) { return c == Color::White ? Color::Black : Color::White; }

enum class PieceKind : std::uint8_t { Pawn = 0, Knight, Bishop, Rook, Queen, King };

/// The 13 square classes: empty, six white kinds, six black kinds (in that order).
enum class Piece : std::uint8_t {
    Empty = 0,
    WhitePawn, WhiteKnight, WhiteBishop, WhiteRook, WhiteQueen, WhiteKing,
    BlackPawn, BlackKnight, BlackBishop, BlackRook, BlackQueen, BlackKing,
};
constexpr int kPieceClasses = 13;

constexpr Piece make_piece(Color c, PieceKind k) {
    return static_cast<Piece>(1 + static_cast<int>(k) + (c == Color::Black ? 6 : 0));
}
constexpr PieceKind kind_of(Piece p) { return static_cast<PieceKind>((static_cast<int>(p) - 1) % 6); }
constexpr Color color_of(Piece p) { return static_cast<int>(p) <= 6 ? Color::White : Color::Black; }
char piece_char(Piece p);  // FEN letter, '.' for empty

struct Move {
    Square from = 0;
    Square to = 0;
    std::optional<PieceKind> promotion;

    std::string uci() const;
    auto operator<=>(const Move&) const = default;
};

/// Thrown for malformed UCI, FEN or SAN text.
class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& what, int index) : std::runtime_error(what), index_(index) {}
    /// Offending character (UCI) or field (FEN) index.
    int index() const { return index_; }

private:
    int index_;
};

enum class IllegalReason : std::uint8_t {
    NoPiece,
    WrongColor,
    BadGeometry,
    BlockedPath,
    LeavesKingInCheck,
    BadCastle,
    BadPromotion,
};
const char* to_string(IllegalReason r);

class IllegalMoveError : public std::runtime_error {
public:
    IllegalMoveError(const std::string& what, IllegalReason reason, int ply = -1)
        : std::runtime_error(what), reason_(reason), ply_(ply) {}
    IllegalReason reason() const { return reason_; }
    /// Ply index inside a replayed sequence, -1 for a single apply.
    int ply() const { return ply_; }

private:
    IllegalReason reason_;
    int ply_;
};

/// Position digest over placement, side to move, castling rights and en-passant
/// target. Move counters are excluded so equal keys mean repetition.
struct PositionKey {
    std::uint64_t value = 0;
    auto operator<=>(const PositionKey&) const = default;
};

enum Castling : std::uint8_t {
    kWhiteKingside = 1,
    kWhiteQueenside = 2,
    kBlackKingside = 4,
    kBlackQueenside = 8,
};

class BoardState {
public:
    BoardState();  // empty board, white to move
    static BoardState initial();

    Piece at(Square sq) const { return board_[sq]; }
    Color side_to_move() const { return side_; }
    std::uint8_t castling() const { return castling_; }
    std::optional<Square> en_passant() const { return ep_; }
    int halfmove_clock() const { return halfmove_; }
    int fullmove_number() const { return fullmove_; }
    const std::array<Piece, 64>& squares() const { return board_; }

    void set(Square sq, Piece p) { board_[sq] = p; }
    void set_side_to_move(Color c) { side_ = c; }
    void set_castling(std::uint8_t rights) { castling_ = rights; }
    void set_en_passant(std::optional<Square> sq) { ep_ = sq; }
    void set_clocks(int halfmove, int fullmove) {
        halfmove_ = halfmove;
        fullmove_ = fullmove;
    }

    std::optional<Square> king_square(Color c) const;
    bool is_attacked(Square sq, Color by) const;
    bool in_check() const;

    PositionKey key() const;

    bool operator==(const BoardState&) const = default;

    /// Plays a move already known to be legal; no validation.
    BoardState after(const Move& m) const;

private:
    std::array<Piece, 64> board_{};
    Color side_ = Color::White;
    std::uint8_t castling_ = 0;
    std::optional<Square> ep_;
    int halfmove_ = 0;
    int fullmove_ = 1;
};

Move parse_uci_move(std::string_view text);

std::vector<Move> legal_moves(const BoardState& state);
bool is_legal(const BoardState& state, const Move& m);

/// Validating move application. Throws IllegalMoveError with the reason class.
BoardState apply_move(const BoardState& state, const Move& m);

enum class Phase : std::uint8_t { Opening = 0, Middlegame = 1, Endgame = 2 };
const char* to_string(Phase p);

/// Opening through ply 20; Endgame once combined non-pawn, non-king material is
/// at most 13 (Q=9, R=5, B=N=3); Middlegame otherwise.
Phase classify_phase(const BoardState& state, int ply);
int non_pawn_material(const BoardState& state);

struct Replay {
    BoardState final_state;
    std::vector<PositionKey> keys;  // key of the position after each ply
    std::vector<Phase> phases;      // phase of the position after each ply
};

/// Applies moves from the initial position (or `start`). Throws IllegalMoveError
/// carrying the failing ply index.
Replay replay(std::span<const Move> moves);
Replay replay(const BoardState& start, std::span<const Move> moves);

std::string to_fen(const BoardState& state);
BoardState from_fen(std::string_view fen);

std::string to_san(const BoardState& state, const Move& m);
/// Resolves SAN against the legal moves of `state`. Throws ParseError on
/// malformed text and IllegalMoveError when well-formed but not playable.
Move parse_san(const BoardState& state, std::string_view san);

std::uint64_t perft(const BoardState& state, int depth);

enum class Termination : std::uint8_t {
    None,
    Checkmate,
    Stalemate,
    ThreefoldRepetition,
    FiftyMoveRule,
    InsufficientMaterial,
    MaxPlies,
};
const char* to_string(Termination t);

bool insufficient_material(const BoardState& state);

/// Adjudicates a position given the key history of the game so far (including
/// the current position as the last entry).
Termination adjudicate(const BoardState& state, std::span<const PositionKey> history);

}  // namespace seqchess::chess
