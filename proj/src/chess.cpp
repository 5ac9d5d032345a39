#include "seqchess/chess.h"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdlib>
#include <sstream>

namespace seqchess::chess {

namespace {

constexpr std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

struct ZobristTables {
    std::uint64_t piece[kPieceClasses][64]{};
    std::uint64_t black_to_move = 0;
    std::uint64_t castling[16]{};
    std::uint64_t en_passant[64]{};
};

constexpr ZobristTables make_zobrist() {
    ZobristTables t;
    std::uint64_t s = 0x5EC0C4E55ULL;
    for (int p = 1; p < kPieceClasses; ++p)
        for (int sq = 0; sq < 64; ++sq) t.piece[p][sq] = splitmix64(s);
    t.black_to_move = splitmix64(s);
    for (auto& c : t.castling) c = splitmix64(s);
    for (auto& e : t.en_passant) e = splitmix64(s);
    return t;
}

constexpr ZobristTables kZobrist = make_zobrist();

struct Delta {
    int df;
    int dr;
};

constexpr Delta kKnightDeltas[] = {{1, 2}, {2, 1}, {2, -1}, {1, -2}, {-1, -2}, {-2, -1}, {-2, 1}, {-1, 2}};
constexpr Delta kKingDeltas[] = {{1, 0}, {1, 1}, {0, 1}, {-1, 1}, {-1, 0}, {-1, -1}, {0, -1}, {1, -1}};
constexpr Delta kRookDirs[] = {{1, 0}, {-1, 0}, {0, 1}, {0, -1}};
constexpr Delta kBishopDirs[] = {{1, 1}, {1, -1}, {-1, 1}, {-1, -1}};

constexpr bool on_board(int f, int r) { return f >= 0 && f < 8 && r >= 0 && r < 8; }

bool is_color(Piece p, Color c) { return p != Piece::Empty && color_of(p) == c; }

int pawn_dir(Color c) { return c == Color::White ? 1 : -1; }
int pawn_start_rank(Color c) { return c == Color::White ? 1 : 6; }
int last_rank(Color c) { return c == Color::White ? 7 : 0; }

constexpr PieceKind kPromotionKinds[] = {PieceKind::Knight, PieceKind::Bishop, PieceKind::Rook, PieceKind::Queen};

void add_pawn_move(std::vector<Move>& out, Square from, Square to, Color side) {
    if (rank_of(to) == last_rank(side)) {
        for (auto k : kPromotionKinds) out.push_back(Move{from, to, k});
    } else {
        out.push_back(Move{from, to, std::nullopt});
    }
}

void pseudo_moves(const BoardState& s, std::vector<Move>& out) {
    const Color side = s.side_to_move();
    for (int sq = 0; sq < 64; ++sq) {
        const Piece p = s.at(static_cast<Square>(sq));
        if (!is_color(p, side)) continue;
        const int f = file_of(static_cast<Square>(sq));
        const int r = rank_of(static_cast<Square>(sq));
        const auto from = static_cast<Square>(sq);
        switch (kind_of(p)) {
            case PieceKind::Pawn: {
                const int dir = pawn_dir(side);
                if (on_board(f, r + dir) && s.at(make_square(f, r + dir)) == Piece::Empty) {
                    add_pawn_move(out, from, make_square(f, r + dir), side);
                    if (r == pawn_start_rank(side) && s.at(make_square(f, r + 2 * dir)) == Piece::Empty)
                        out.push_back(Move{from, make_square(f, r + 2 * dir), std::nullopt});
                }
                for (int df : {-1, 1}) {
                    if (!on_board(f + df, r + dir)) continue;
                    const Square to = make_square(f + df, r + dir);
                    if (is_color(s.at(to), !side) || (s.en_passant() && *s.en_passant() == to))
                        add_pawn_move(out, from, to, side);
                }
                break;
            }
            case PieceKind::Knight:
            case PieceKind::King: {
                const auto& deltas = kind_of(p) == PieceKind::Knight ? kKnightDeltas : kKingDeltas;
                for (const auto& d : deltas) {
                    if (!on_board(f + d.df, r + d.dr)) continue;
                    const Square to = make_square(f + d.df, r + d.dr);
                    if (!is_color(s.at(to), side)) out.push_back(Move{from, to, std::nullopt});
                }
                break;
            }
            case PieceKind::Bishop:
            case PieceKind::Rook:
            case PieceKind::Queen: {
                auto slide = [&](const Delta& d) {
                    int tf = f + d.df, tr = r + d.dr;
                    while (on_board(tf, tr)) {
                        const Square to = make_square(tf, tr);
                        if (is_color(s.at(to), side)) break;
                        out.push_back(Move{from, to, std::nullopt});
                        if (s.at(to) != Piece::Empty) break;
                        tf += d.df;
                        tr += d.dr;
                    }
                };
                if (kind_of(p) != PieceKind::Bishop)
                    for (const auto& d : kRookDirs) slide(d);
                if (kind_of(p) != PieceKind::Rook)
                    for (const auto& d : kBishopDirs) slide(d);
                break;
            }
        }
    }
}

// Castling squares for the side to move; the king sits on e1/e8.
struct CastleSpec {
    std::uint8_t right;
    Square king_from, king_to, rook_from, rook_to;
    std::array<Square, 3> must_be_empty;
    int empty_count;
};

constexpr CastleSpec kCastles[4] = {
    {kWhiteKingside, 4, 6, 7, 5, {5, 6, 0}, 2},
    {kWhiteQueenside, 4, 2, 0, 3, {1, 2, 3}, 3},
    {kBlackKingside, 60, 62, 63, 61, {61, 62, 0}, 2},
    {kBlackQueenside, 60, 58, 56, 59, {57, 58, 59}, 3},
};

// Returns nullptr when castling along `spec` is legal, else a description.
const char* castle_defect(const BoardState& s, const CastleSpec& spec) {
    const Color side = s.side_to_move();
    if (!(s.castling() & spec.right)) return "castling right not available";
    if (s.at(spec.king_from) != make_piece(side, PieceKind::King)) return "king not on its home square";
    if (s.at(spec.rook_from) != make_piece(side, PieceKind::Rook)) return "rook not on its home square";
    for (int i = 0; i < spec.empty_count; ++i)
        if (s.at(spec.must_be_empty[i]) != Piece::Empty) return "squares between king and rook occupied";
    if (s.is_attacked(spec.king_from, !side)) return "king is in check";
    const Square transit = static_cast<Square>((spec.king_from + spec.king_to) / 2);
    if (s.is_attacked(transit, !side) || s.is_attacked(spec.king_to, !side)) return "king passes through check";
    return nullptr;
}

const CastleSpec* castle_for(const BoardState& s, const Move& m) {
    for (const auto& spec : kCastles) {
        const bool mine = (s.side_to_move() == Color::White) == (spec.king_from == 4);
        if (mine && m.from == spec.king_from && m.to == spec.king_to &&
            s.at(m.from) == make_piece(s.side_to_move(), PieceKind::King))
            return &spec;
    }
    return nullptr;
}

void castle_moves(const BoardState& s, std::vector<Move>& out) {
    for (const auto& spec : kCastles) {
        const bool mine = (s.side_to_move() == Color::White) == (spec.king_from == 4);
        if (mine && castle_defect(s, spec) == nullptr)
            out.push_back(Move{spec.king_from, spec.king_to, std::nullopt});
    }
}

bool leaves_king_safe(const BoardState& s, const Move& m) {
    const BoardState next = s.after(m);
    const auto king = next.king_square(s.side_to_move());
    return king && !next.is_attacked(*king, !s.side_to_move());
}

std::uint8_t rights_lost_at(Square sq) {
    switch (sq) {
        case 0: return kWhiteQueenside;
        case 4: return kWhiteKingside | kWhiteQueenside;
        case 7: return kWhiteKingside;
        case 56: return kBlackQueenside;
        case 60: return kBlackKingside | kBlackQueenside;
        case 63: return kBlackKingside;
        default: return 0;
    }
}

char kind_char(PieceKind k) { return "pnbrqk"[static_cast<int>(k)]; }

std::optional<PieceKind> kind_from_char(char c) {
    switch (std::tolower(static_cast<unsigned char>(c))) {
        case 'p': return PieceKind::Pawn;
        case 'n': return PieceKind::Knight;
        case 'b': return PieceKind::Bishop;
        case 'r': return PieceKind::Rook;
        case 'q': return PieceKind::Queen;
        case 'k': return PieceKind::King;
        default: return std::nullopt;
    }
}

bool path_clear(const BoardState& s, Square from, Square to) {
    const int df = (file_of(to) > file_of(from)) - (file_of(to) < file_of(from));
    const int dr = (rank_of(to) > rank_of(from)) - (rank_of(to) < rank_of(from));
    int f = file_of(from) + df, r = rank_of(from) + dr;
    while (make_square(f, r) != to) {
        if (s.at(make_square(f, r)) != Piece::Empty) return false;
        f += df;
        r += dr;
    }
    return true;
}

IllegalMoveError diagnose(const BoardState& s, const Move& m) {
    const std::string text = m.uci();
    const Piece p = s.at(m.from);
    if (p == Piece::Empty) return {text + ": no piece on " + square_name(m.from), IllegalReason::NoPiece};
    const Color side = s.side_to_move();
    if (color_of(p) != side) return {text + ": piece belongs to the side not on move", IllegalReason::WrongColor};

    const int df = file_of(m.to) - file_of(m.from);
    const int dr = rank_of(m.to) - rank_of(m.from);
    const PieceKind kind = kind_of(p);

    if (kind == PieceKind::King && dr == 0 && std::abs(df) == 2 && (m.from == 4 || m.from == 60)) {
        if (m.promotion) return {text + ": promotion on a king move", IllegalReason::BadPromotion};
        if (const auto* spec = castle_for(s, m)) {
            if (const char* why = castle_defect(s, *spec)) return {text + ": " + why, IllegalReason::BadCastle};
        }
        return {text + ": castling not possible", IllegalReason::BadCastle};
    }

    const bool reaches_last = kind == PieceKind::Pawn && rank_of(m.to) == last_rank(side);
    if (m.promotion && (!reaches_last || *m.promotion == PieceKind::King || *m.promotion == PieceKind::Pawn))
        return {text + ": promotion not allowed here", IllegalReason::BadPromotion};

    bool geometric = false;
    switch (kind) {
        case PieceKind::Pawn: {
            const int dir = pawn_dir(side);
            geometric = (df == 0 && (dr == dir || (dr == 2 * dir && rank_of(m.from) == pawn_start_rank(side)))) ||
                        (std::abs(df) == 1 && dr == dir);
            break;
        }
        case PieceKind::Knight: geometric = (std::abs(df) == 1 && std::abs(dr) == 2) || (std::abs(df) == 2 && std::abs(dr) == 1); break;
        case PieceKind::Bishop: geometric = df != 0 && std::abs(df) == std::abs(dr); break;
        case PieceKind::Rook: geometric = (df == 0) != (dr == 0); break;
        case PieceKind::Queen: geometric = (df != 0 || dr != 0) && (df == 0 || dr == 0 || std::abs(df) == std::abs(dr)); break;
        case PieceKind::King: geometric = (df != 0 || dr != 0) && std::abs(df) <= 1 && std::abs(dr) <= 1; break;
    }
    if (!geometric) return {text + ": piece cannot move that way", IllegalReason::BadGeometry};

    if (is_color(s.at(m.to), side)) return {text + ": destination occupied by own piece", IllegalReason::BlockedPath};
    if (kind == PieceKind::Pawn) {
        if (df == 0) {
            if (!path_clear(s, m.from, m.to) || s.at(m.to) != Piece::Empty)
                return {text + ": pawn path blocked", IllegalReason::BlockedPath};
        } else if (s.at(m.to) == Piece::Empty && !(s.en_passant() && *s.en_passant() == m.to)) {
            return {text + ": pawn diagonal without capture", IllegalReason::BadGeometry};
        }
    } else if (kind == PieceKind::Bishop || kind == PieceKind::Rook || kind == PieceKind::Queen) {
        if (!path_clear(s, m.from, m.to)) return {text + ": path blocked", IllegalReason::BlockedPath};
    }
    if (reaches_last && !m.promotion) return {text + ": pawn reaching last rank must promote", IllegalReason::BadPromotion};
    return {text + ": leaves own king in check", IllegalReason::LeavesKingInCheck};
}

}  // namespace

std::string square_name(Square sq) {
    return {static_cast<char>('a' + file_of(sq)), static_cast<char>('1' + rank_of(sq))};
}

char piece_char(Piece p) {
    if (p == Piece::Empty) return '.';
    const char c = "PNBRQK"[static_cast<int>(kind_of(p))];
    return color_of(p) == Color::White ? c : static_cast<char>(std::tolower(c));
}

std::string Move::uci() const {
    std::string s = square_name(from) + square_name(to);
    if (promotion) s += kind_char(*promotion);
    return s;
}

const char* to_string(IllegalReason r) {
    switch (r) {
        case IllegalReason::NoPiece: return "no_piece";
        case IllegalReason::WrongColor: return "wrong_color";
        case IllegalReason::BadGeometry: return "bad_geometry";
        case IllegalReason::BlockedPath: return "blocked_path";
        case IllegalReason::LeavesKingInCheck: return "leaves_king_in_check";
        case IllegalReason::BadCastle: return "bad_castle";
        case IllegalReason::BadPromotion: return "bad_promotion";
    }
    return "unknown";
}

const char* to_string(Phase p) {
    switch (p) {
        case Phase::Opening: return "opening";
        case Phase::Middlegame: return "middlegame";
        case Phase::Endgame: return "endgame";
    }
    return "unknown";
}

const char* to_string(Termination t) {
    switch (t) {
        case Termination::None: return "none";
        case Termination::Checkmate: return "checkmate";
        case Termination::Stalemate: return "stalemate";
        case Termination::ThreefoldRepetition: return "threefold_repetition";
        case Termination::FiftyMoveRule: return "fifty_move_rule";
        case Termination::InsufficientMaterial: return "insufficient_material";
        case Termination::MaxPlies: return "max_plies";
    }
    return "unknown";
}

BoardState::BoardState() { board_.fill(Piece::Empty); }

BoardState BoardState::initial() {
    return from_fen("rnbqkbnr/pppppppp/8/8/8/8/PPPPPPPP/RNBQKBNR w KQkq - 0 1");
}

std::optional<Square> BoardState::king_square(Color c) const {
    const Piece king = make_piece(c, PieceKind::King);
    for (int sq = 0; sq < 64; ++sq)
        if (board_[sq] == king) return static_cast<Square>(sq);
    return std::nullopt;
}

bool BoardState::is_attacked(Square sq, Color by) const {
    const int f = file_of(sq), r = rank_of(sq);
    const int back = -pawn_dir(by);
    for (int df : {-1, 1})
        if (on_board(f + df, r + back) && board_[make_square(f + df, r + back)] == make_piece(by, PieceKind::Pawn))
            return true;
    for (const auto& d : kKnightDeltas)
        if (on_board(f + d.df, r + d.dr) && board_[make_square(f + d.df, r + d.dr)] == make_piece(by, PieceKind::Knight))
            return true;
    for (const auto& d : kKingDeltas)
        if (on_board(f + d.df, r + d.dr) && board_[make_square(f + d.df, r + d.dr)] == make_piece(by, PieceKind::King))
            return true;
    auto ray_hits = [&](const Delta& d, PieceKind a, PieceKind b) {
        int tf = f + d.df, tr = r + d.dr;
        while (on_board(tf, tr)) {
            const Piece p = board_[make_square(tf, tr)];
            if (p != Piece::Empty) return p == make_piece(by, a) || p == make_piece(by, b);
            tf += d.df;
            tr += d.dr;
        }
        return false;
    };
    for (const auto& d : kRookDirs)
        if (ray_hits(d, PieceKind::Rook, PieceKind::Queen)) return true;
    for (const auto& d : kBishopDirs)
        if (ray_hits(d, PieceKind::Bishop, PieceKind::Queen)) return true;
    return false;
}

bool BoardState::in_check() const {
    const auto k = king_square(side_);
    return k && is_attacked(*k, !side_);
}

PositionKey BoardState::key() const {
    std::uint64_t h = 0;
    for (int sq = 0; sq < 64; ++sq)
        if (board_[sq] != Piece::Empty) h ^= kZobrist.piece[static_cast<int>(board_[sq])][sq];
    if (side_ == Color::Black) h ^= kZobrist.black_to_move;
    h ^= kZobrist.castling[castling_ & 15];
    if (ep_) h ^= kZobrist.en_passant[*ep_];
    return PositionKey{h};
}

BoardState BoardState::after(const Move& m) const {
    BoardState n = *this;
    const Piece p = board_[m.from];
    const Piece captured = board_[m.to];
    const PieceKind kind = kind_of(p);

    n.board_[m.from] = Piece::Empty;
    n.board_[m.to] = m.promotion ? make_piece(side_, *m.promotion) : p;
    n.ep_.reset();

    if (kind == PieceKind::Pawn) {
        if (ep_ && m.to == *ep_ && captured == Piece::Empty && file_of(m.from) != file_of(m.to)) {
            n.board_[make_square(file_of(m.to), rank_of(m.from))] = Piece::Empty;
        }
        if (std::abs(rank_of(m.to) - rank_of(m.from)) == 2)
            n.ep_ = make_square(file_of(m.from), (rank_of(m.from) + rank_of(m.to)) / 2);
    } else if (kind == PieceKind::King && std::abs(file_of(m.to) - file_of(m.from)) == 2) {
        for (const auto& spec : kCastles) {
            if (spec.king_from == m.from && spec.king_to == m.to) {
                n.board_[spec.rook_to] = n.board_[spec.rook_from];
                n.board_[spec.rook_from] = Piece::Empty;
            }
        }
    }

    n.castling_ &= static_cast<std::uint8_t>(~(rights_lost_at(m.from) | rights_lost_at(m.to)));
    n.halfmove_ = (kind == PieceKind::Pawn || captured != Piece::Empty) ? 0 : halfmove_ + 1;
    if (side_ == Color::Black) ++n.fullmove_;
    n.side_ = !side_;
    return n;
}

Move parse_uci_move(std::string_view text) {
    if (text.size() != 4 && text.size() != 5)
        throw ParseError("UCI move must have 4 or 5 characters: '" + std::string(text) + "'", static_cast<int>(text.size()));
    auto coord = [&](int i, char lo, char hi, const char* what) {
        const char c = text[static_cast<std::size_t>(i)];
        if (c < lo || c > hi)
            throw ParseError("bad " + std::string(what) + " '" + std::string(1, c) + "' at index " + std::to_string(i) +
                                 " in '" + std::string(text) + "'",
                             i);
        return c - lo;
    };
    Move m;
    m.from = make_square(coord(0, 'a', 'h', "file"), coord(1, '1', '8', "rank"));
    m.to = make_square(coord(2, 'a', 'h', "file"), coord(3, '1', '8', "rank"));
    if (text.size() == 5) {
        switch (text[4]) {
            case 'n': m.promotion = PieceKind::Knight; break;
            case 'b': m.promotion = PieceKind::Bishop; break;
            case 'r': m.promotion = PieceKind::Rook; break;
            case 'q': m.promotion = PieceKind::Queen; break;
            default:
                throw ParseError("bad promotion '" + std::string(1, text[4]) + "' at index 4 in '" + std::string(text) + "'", 4);
        }
    }
    return m;
}

std::vector<Move> legal_moves(const BoardState& state) {
    std::vector<Move> pseudo;
    pseudo.reserve(64);
    pseudo_moves(state, pseudo);
    std::vector<Move> out;
    out.reserve(pseudo.size() + 2);
    for (const auto& m : pseudo)
        if (leaves_king_safe(state, m)) out.push_back(m);
    castle_moves(state, out);
    return out;
}

bool is_legal(const BoardState& state, const Move& m) {
    const Piece p = state.at(m.from);
    if (!is_color(p, state.side_to_move())) return false;
    const auto moves = legal_moves(state);
    return std::find(moves.begin(), moves.end(), m) != moves.end();
}

BoardState apply_move(const BoardState& state, const Move& m) {
    if (!is_legal(state, m)) throw diagnose(state, m);
    return state.after(m);
}

int non_pawn_material(const BoardState& state) {
    int total = 0;
    for (Piece p : state.squares()) {
        if (p == Piece::Empty) continue;
        switch (kind_of(p)) {
            case PieceKind::Knight:
            case PieceKind::Bishop: total += 3; break;
            case PieceKind::Rook: total += 5; break;
            case PieceKind::Queen: total += 9; break;
            default: break;
        }
    }
    return total;
}

Phase classify_phase(const BoardState& state, int ply) {
    if (ply <= 20) return Phase::Opening;
    return non_pawn_material(state) <= 13 ? Phase::Endgame : Phase::Middlegame;
}

Replay replay(std::span<const Move> moves) { return replay(BoardState::initial(), moves); }

Replay replay(const BoardState& start, std::span<const Move> moves) {
    Replay r{start, {}, {}};
    r.keys.reserve(moves.size());
    r.phases.reserve(moves.size());
    for (std::size_t i = 0; i < moves.size(); ++i) {
        try {
            r.final_state = apply_move(r.final_state, moves[i]);
        } catch (const IllegalMoveError& e) {
            throw IllegalMoveError("ply " + std::to_string(i) + ": " + e.what(), e.reason(), static_cast<int>(i));
        }
        r.keys.push_back(r.final_state.key());
        r.phases.push_back(classify_phase(r.final_state, static_cast<int>(i) + 1));
    }
    return r;
}

std::string to_fen(const BoardState& s) {
    std::string out;
    for (int r = 7; r >= 0; --r) {
        int empty = 0;
        for (int f = 0; f < 8; ++f) {
            const Piece p = s.at(make_square(f, r));
            if (p == Piece::Empty) {
                ++empty;
                continue;
            }
            if (empty) out += static_cast<char>('0' + empty);
            empty = 0;
            out += piece_char(p);
        }
        if (empty) out += static_cast<char>('0' + empty);
        if (r) out += '/';
    }
    out += s.side_to_move() == Color::White ? " w " : " b ";
    std::string rights;
    if (s.castling() & kWhiteKingside) rights += 'K';
    if (s.castling() & kWhiteQueenside) rights += 'Q';
    if (s.castling() & kBlackKingside) rights += 'k';
    if (s.castling() & kBlackQueenside) rights += 'q';
    out += rights.empty() ? "-" : rights;
    out += ' ';
    out += s.en_passant() ? square_name(*s.en_passant()) : "-";
    out += ' ' + std::to_string(s.halfmove_clock()) + ' ' + std::to_string(s.fullmove_number());
    return out;
}

BoardState from_fen(std::string_view fen) {
    std::vector<std::string> fields;
    {
        std::istringstream in{std::string(fen)};
        std::string f;
        while (in >> f) fields.push_back(f);
    }
    if (fields.size() != 4 && fields.size() != 6)
        throw ParseError("FEN must have 4 or 6 fields, got " + std::to_string(fields.size()),
                         static_cast<int>(std::min<std::size_t>(fields.size(), 6)));

    BoardState s;
    int rank = 7, file = 0;
    for (char c : fields[0]) {
        if (c == '/') {
            if (file != 8) throw ParseError("FEN rank " + std::to_string(rank + 1) + " does not span 8 files", 0);
            --rank;
            file = 0;
            if (rank < 0) throw ParseError("FEN placement has more than 8 ranks", 0);
        } else if (c >= '1' && c <= '8') {
            file += c - '0';
            if (file > 8) throw ParseError("FEN rank " + std::to_string(rank + 1) + " exceeds 8 files", 0);
        } else {
            const auto kind = kind_from_char(c);
            if (!kind) throw ParseError("bad FEN piece character '" + std::string(1, c) + "'", 0);
            if (file >= 8) throw ParseError("FEN rank " + std::to_string(rank + 1) + " exceeds 8 files", 0);
            const Color color = std::isupper(static_cast<unsigned char>(c)) ? Color::White : Color::Black;
            s.set(make_square(file, rank), make_piece(color, *kind));
            ++file;
        }
    }
    if (rank != 0 || file != 8) throw ParseError("FEN placement must describe 8 ranks of 8 files", 0);

    if (fields[1] == "w") {
        s.set_side_to_move(Color::White);
    } else if (fields[1] == "b") {
        s.set_side_to_move(Color::Black);
    } else {
        throw ParseError("bad FEN side to move '" + fields[1] + "'", 1);
    }

    std::uint8_t rights = 0;
    if (fields[2] != "-") {
        for (char c : fields[2]) {
            switch (c) {
                case 'K': rights |= kWhiteKingside; break;
                case 'Q': rights |= kWhiteQueenside; break;
                case 'k': rights |= kBlackKingside; break;
                case 'q': rights |= kBlackQueenside; break;
                default: throw ParseError("bad FEN castling field '" + fields[2] + "'", 2);
            }
        }
    }
    s.set_castling(rights);

    if (fields[3] != "-") {
        const auto& e = fields[3];
        if (e.size() != 2 || e[0] < 'a' || e[0] > 'h' || (e[1] != '3' && e[1] != '6'))
            throw ParseError("bad FEN en-passant field '" + e + "'", 3);
        s.set_en_passant(make_square(e[0] - 'a', e[1] - '1'));
    }

    if (fields.size() == 6) {
        int clocks[2] = {0, 1};
        for (int i = 0; i < 2; ++i) {
            const auto& t = fields[4 + static_cast<std::size_t>(i)];
            auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), clocks[i]);
            if (ec != std::errc{} || ptr != t.data() + t.size() || clocks[i] < 0 || (i == 1 && clocks[i] < 1))
                throw ParseError("bad FEN counter '" + t + "'", 4 + i);
        }
        s.set_clocks(clocks[0], clocks[1]);
    }

    int kings[2] = {0, 0};
    for (int sq = 0; sq < 64; ++sq) {
        const Piece p = s.at(static_cast<Square>(sq));
        if (p == Piece::Empty) continue;
        if (kind_of(p) == PieceKind::King) ++kings[static_cast<int>(color_of(p))];
        if (kind_of(p) == PieceKind::Pawn && (rank_of(static_cast<Square>(sq)) == 0 || rank_of(static_cast<Square>(sq)) == 7))
            throw ParseError("FEN has a pawn on the first or last rank", 0);
    }
    if (kings[0] != 1 || kings[1] != 1) throw ParseError("FEN must have exactly one king per color", 0);
    return s;
}

std::string to_san(const BoardState& state, const Move& m) {
    const Piece p = state.at(m.from);
    if (p == Piece::Empty) throw IllegalMoveError(m.uci() + ": no piece", IllegalReason::NoPiece);
    const PieceKind kind = kind_of(p);
    std::string san;
    if (kind == PieceKind::King && std::abs(file_of(m.to) - file_of(m.from)) == 2) {
        san = file_of(m.to) == 6 ? "O-O" : "O-O-O";
    } else {
        const bool capture = state.at(m.to) != Piece::Empty ||
                             (kind == PieceKind::Pawn && file_of(m.from) != file_of(m.to));
        if (kind == PieceKind::Pawn) {
            if (capture) san += static_cast<char>('a' + file_of(m.from));
        } else {
            san += "PNBRQK"[static_cast<int>(kind)];
            bool ambiguous = false, same_file = false, same_rank = false;
            for (const auto& o : legal_moves(state)) {
                if (o.to != m.to || o.from == m.from || state.at(o.from) != p) continue;
                ambiguous = true;
                same_file |= file_of(o.from) == file_of(m.from);
                same_rank |= rank_of(o.from) == rank_of(m.from);
            }
            if (ambiguous) {
                if (!same_file) {
                    san += static_cast<char>('a' + file_of(m.from));
                } else if (!same_rank) {
                    san += static_cast<char>('1' + rank_of(m.from));
                } else {
                    san += square_name(m.from);
                }
            }
        }
        if (capture) san += 'x';
        san += square_name(m.to);
        if (m.promotion) {
            san += '=';
            san += "PNBRQK"[static_cast<int>(*m.promotion)];
        }
    }
    const BoardState next = state.after(m);
    if (next.in_check()) san += legal_moves(next).empty() ? '#' : '+';
    return san;
}

Move parse_san(const BoardState& state, std::string_view san) {
    std::string t(san);
    while (!t.empty() && (t.back() == '+' || t.back() == '#' || t.back() == '!' || t.back() == '?')) t.pop_back();
    if (t.empty()) throw ParseError("empty SAN", 0);

    const auto moves = legal_moves(state);
    const Color side = state.side_to_move();

    if (t == "O-O" || t == "0-0" || t == "O-O-O" || t == "0-0-0") {
        const bool queen = t.size() == 5;
        const Square from = side == Color::White ? 4 : 60;
        const Move m{from, static_cast<Square>(from + (queen ? -2 : 2)), std::nullopt};
        if (std::find(moves.begin(), moves.end(), m) == moves.end())
            throw IllegalMoveError(std::string(san) + ": castling not legal", IllegalReason::BadCastle);
        return m;
    }

    std::optional<PieceKind> promotion;
    if (t.size() >= 2 && std::string_view("NBRQ").find(t.back()) != std::string_view::npos) {
        promotion = kind_from_char(t.back());
        t.pop_back();
        if (!t.empty() && t.back() == '=') t.pop_back();
    }
    if (t.size() < 2) throw ParseError("SAN too short: '" + std::string(san) + "'", 0);
    const char tf = t[t.size() - 2], tr = t[t.size() - 1];
    if (tf < 'a' || tf > 'h' || tr < '1' || tr > '8')
        throw ParseError("bad SAN destination in '" + std::string(san) + "'", static_cast<int>(t.size()) - 2);
    const Square to = make_square(tf - 'a', tr - '1');
    std::string_view head(t.data(), t.size() - 2);

    PieceKind kind = PieceKind::Pawn;
    if (!head.empty() && std::string_view("NBRQK").find(head.front()) != std::string_view::npos) {
        kind = *kind_from_char(head.front());
        head.remove_prefix(1);
    }
    int dis_file = -1, dis_rank = -1;
    for (std::size_t i = 0; i < head.size(); ++i) {
        const char c = head[i];
        if (c == 'x' || c == ':' || c == '-') continue;
        if (c >= 'a' && c <= 'h') {
            dis_file = c - 'a';
        } else if (c >= '1' && c <= '8') {
            dis_rank = c - '1';
        } else {
            throw ParseError("bad SAN character '" + std::string(1, c) + "' in '" + std::string(san) + "'",
                             static_cast<int>(i));
        }
    }
    if (promotion && kind != PieceKind::Pawn) throw ParseError("promotion on a non-pawn in '" + std::string(san) + "'", 0);

    const Move* found = nullptr;
    int matches = 0;
    for (const auto& m : moves) {
        if (m.to != to || kind_of(state.at(m.from)) != kind || m.promotion != promotion) continue;
        if (dis_file >= 0 && file_of(m.from) != dis_file) continue;
        if (dis_rank >= 0 && rank_of(m.from) != dis_rank) continue;
        found = &m;
        ++matches;
    }
    if (matches == 0) throw IllegalMoveError(std::string(san) + ": no legal move matches", IllegalReason::BadGeometry);
    if (matches > 1) throw ParseError("ambiguous SAN '" + std::string(san) + "'", 0);
    return *found;
}

std::uint64_t perft(const BoardState& state, int depth) {
    if (depth == 0) return 1;
    const auto moves = legal_moves(state);
    if (depth == 1) return moves.size();
    std::uint64_t nodes = 0;
    for (const auto& m : moves) nodes += perft(state.after(m), depth - 1);
    return nodes;
}

bool insufficient_material(const BoardState& state) {
    int minors[2] = {0, 0};
    for (Piece p : state.squares()) {
        if (p == Piece::Empty) continue;
        switch (kind_of(p)) {
            case PieceKind::King: break;
            case PieceKind::Knight:
            case PieceKind::Bishop: ++minors[static_cast<int>(color_of(p))]; break;
            default: return false;
        }
    }
    return minors[0] + minors[1] <= 1;
}

Termination adjudicate(const BoardState& state, std::span<const PositionKey> history) {
    if (legal_moves(state).empty()) return state.in_check() ? Termination::Checkmate : Termination::Stalemate;
    const PositionKey k = state.key();
    if (std::count(history.begin(), history.end(), k) >= 3) return Termination::ThreefoldRepetition;
    if (state.halfmove_clock() >= 100) return Termination::FiftyMoveRule;
    if (insufficient_material(state)) return Termination::InsufficientMaterial;
    return Termination::None;
}

}  // namespace seqchess::chess
