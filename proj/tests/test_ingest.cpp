#include <doctest.h>

#include <random>
#include <set>
#include <sstream>

#include "seqchess/ingest.h"

using namespace seqchess;
using chess::Color;

namespace {

const char* kTwoGames = R"([Event "Rated Bullet game"]
[Site "https://lichess.org/abc123"]
[White "alice"]
[Black "bob"]
[Result "1-0"]
[WhiteElo "1523"]
[BlackElo "1490"]
[TimeControl "60+0"]

1. e4 e5 2. Nf3 Nc6 3. Bc4 { a comment } Nf6?! 4. Ng5 d5 5. exd5 Nxd5 6. Nxf7 1-0

[Event "Rated Blitz game"]
[Site "https://lichess.org/def456"]
[White "carol"]
[Black "dave"]
[Result "0-1"]
[WhiteElo "2570"]
[BlackElo "2610"]
[TimeControl "180+2"]

1. f3 e5 2. g4 (2. e4 Nf6) 2... Qh4# 0-1
)";

const char* kIllegal = R"([Event "x"]
[Site "bad"]
[Result "*"]
[WhiteElo "1500"]
[BlackElo "1500"]
[TimeControl "60+0"]

1. e4 e5 2. Ke3 *

[Event "y"]
[Site "noelo"]
[Result "*"]
[TimeControl "60+0"]

1. e4 *

[Event "z"]
[Site "broken
[WhiteElo "1500"]

1. d4 *
)";

// Independent enumeration of from/to pairs: walk rays and knight jumps.
std::size_t count_geometric_pairs() {
    std::set<std::pair<int, int>> pairs;
    const int rays[8][2] = {{1, 0}, {-1, 0}, {0, 1}, {0, -1}, {1, 1}, {1, -1}, {-1, 1}, {-1, -1}};
    const int jumps[8][2] = {{1, 2}, {2, 1}, {-1, 2}, {-2, 1}, {1, -2}, {2, -1}, {-1, -2}, {-2, -1}};
    for (int f = 0; f < 8; ++f) {
        for (int r = 0; r < 8; ++r) {
            for (const auto& d : rays)
                for (int s = 1;; ++s) {
                    const int tf = f + d[0] * s, tr = r + d[1] * s;
                    if (tf < 0 || tf > 7 || tr < 0 || tr > 7) break;
                    pairs.insert({r * 8 + f, tr * 8 + tf});
                }
            for (const auto& d : jumps) {
                const int tf = f + d[0], tr = r + d[1];
                if (tf >= 0 && tf < 8 && tr >= 0 && tr < 8) pairs.insert({r * 8 + f, tr * 8 + tf});
            }
        }
    }
    return pairs.size();
}

std::vector<GameRecord> random_games(int count, int max_plies, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<GameRecord> games;
    for (int i = 0; i < count; ++i) {
        GameRecord g;
        g.id = "g" + std::to_string(i);
        g.white_elo = 600 + static_cast<int>(rng() % 2400);
        g.black_elo = 600 + static_cast<int>(rng() % 2400);
        g.time_control = rng() % 2 ? TimeControl::Bullet : TimeControl::Blitz;
        chess::BoardState s = chess::BoardState::initial();
        for (int p = 0; p < max_plies; ++p) {
            const auto moves = chess::legal_moves(s);
            if (moves.empty()) break;
            const auto m = moves[rng() % moves.size()];
            g.moves.push_back(m);
            s = s.after(m);
        }
        games.push_back(std::move(g));
    }
    return games;
}

}  // namespace

TEST_CASE("PGN stream yields legal records") {
    std::istringstream in(kTwoGames);
    SkipCounters skips;
    const auto games = parse_pgn(in, &skips);
    REQUIRE(games.size() == 2);
    CHECK(skips.total_skipped() == 0);
    CHECK(games[0].white_elo == 1523);
    CHECK(games[0].black_elo == 1490);
    CHECK(games[0].time_control == TimeControl::Bullet);
    CHECK(games[0].result == GameResult::WhiteWin);
    CHECK(games[0].moves.size() == 11);
    CHECK(games[0].id == "https://lichess.org/abc123");
    CHECK(games[1].time_control == TimeControl::Blitz);
    CHECK(games[1].moves.size() == 4);  // variation skipped
    CHECK(games[1].moves.back().uci() == "d8h4");
    for (const auto& g : games) CHECK_NOTHROW(chess::replay(g.moves));
}

TEST_CASE("PGN defects are skipped and counted") {
    std::istringstream in(kIllegal);
    SkipCounters skips;
    const auto games = parse_pgn(in, &skips);
    CHECK(games.empty());
    CHECK(skips.counts["illegal"] == 1);
    CHECK(skips.counts["missing_elo"] == 1);
    CHECK(skips.counts["bad_tags"] == 1);
    CHECK(skips.total_skipped() == 3);

    std::istringstream empty("");
    CHECK(parse_pgn(empty).empty());
}

TEST_CASE("PGN cpl annotations and writer round-trip") {
    const auto games = random_games(20, 90, 3);
    std::ostringstream out;
    for (auto g : games) {
        g.result = GameResult::Draw;
        g.cpl.assign(g.moves.size(), 0.0);
        for (std::size_t i = 0; i < g.cpl.size(); ++i) g.cpl[i] = static_cast<double>((i * 37) % 700);
        write_pgn(out, g);
    }
    std::istringstream in(out.str());
    const auto back = parse_pgn(in);
    REQUIRE(back.size() == games.size());
    for (std::size_t i = 0; i < games.size(); ++i) {
        CHECK(back[i].moves == games[i].moves);
        CHECK(back[i].cpl.size() == games[i].moves.size());
        CHECK(back[i].white_elo == games[i].white_elo);
        CHECK(back[i].time_control == games[i].time_control);
    }
}

TEST_CASE("time control and elo bucketing") {
    CHECK(classify_time_control("60+0") == TimeControl::Bullet);
    CHECK(classify_time_control("179+1") == TimeControl::Bullet);
    CHECK(classify_time_control("180+0") == TimeControl::Blitz);
    CHECK(classify_time_control("600+0") == TimeControl::Blitz);
    CHECK(classify_time_control("900+10") == TimeControl::Other);
    CHECK(classify_time_control("-") == TimeControl::Other);

    CHECK(elo_bucket(2570) == 2500);
    CHECK(elo_bucket(300) == 600);
    CHECK(elo_bucket(3200) == 2900);
    for (int e = 0; e < 4000; ++e) CHECK(elo_bucket(e) <= elo_bucket(e + 1));
}

TEST_CASE("vocabulary layout") {
    const Vocabulary& v = standard_vocabulary();
    CHECK(v.size() >= 1800);
    CHECK(v.size() <= 2100);
    std::size_t base = 0, promo = 0, e2e4 = 0;
    for (std::size_t t = v.first_move_token(); t < v.size(); ++t) {
        const auto& s = v.text(static_cast<Token>(t));
        (s.size() == 4 ? base : promo)++;
        e2e4 += s == "e2e4";
    }
    CHECK(e2e4 == 1);
    CHECK(base == count_geometric_pairs());
    CHECK(base == 1792);
    CHECK(promo == 176);
    CHECK(v.move_token_count() == 1968);
    CHECK(v.special_token_count() == 30);
    CHECK(v.text(v.elo(2570)) == "[elo_2500]");

    const Vocabulary again = Vocabulary::from_json(nlohmann::json::parse(v.to_json().dump()));
    CHECK(again == v);
    for (std::size_t t = 0; t < v.size(); ++t) CHECK(again.find(v.text(static_cast<Token>(t))) == static_cast<Token>(t));
}

TEST_CASE("build_sequences emits one sequence per color") {
    const Vocabulary& v = standard_vocabulary();
    GameRecord g;
    g.white_elo = 2570;
    g.black_elo = 1200;
    g.time_control = TimeControl::Bullet;
    for (const auto* u : {"e2e4", "e7e5", "g1f3"}) g.moves.push_back(chess::parse_uci_move(u));
    const auto [w, b] = build_sequences(v, g);
    CHECK(w.tokens.size() == 7);
    CHECK(b.tokens.size() == 7);
    CHECK(w.tokens[0] == v.bos());
    CHECK(v.text(w.tokens[2]) == "[elo_2500]");
    CHECK(v.text(b.tokens[2]) == "[elo_1200]");
    CHECK(v.text(w.tokens[3]) == "[white]");
    CHECK(v.text(b.tokens[3]) == "[black]");
    CHECK(std::equal(w.tokens.begin() + 4, w.tokens.end(), b.tokens.begin() + 4));

    const auto long_game = random_games(1, 400, 77).front();
    if (long_game.moves.size() >= 200) {
        const auto [lw, lb] = build_sequences(v, long_game);
        CHECK(lw.tokens.size() == kMaxSequenceLength);
        CHECK(lb.tokens.size() == kMaxSequenceLength);
    }
    GameRecord two_hundred;
    two_hundred.moves.assign(200, chess::parse_uci_move("g1f3"));  // legality is irrelevant to encoding
    const auto [tw, tb] = build_sequences(v, two_hundred);
    CHECK(tw.tokens.size() == 170);
    CHECK(tb.tokens.size() == 170);
}

TEST_CASE("encode and decode") {
    const Vocabulary& v = standard_vocabulary();
    const SequenceHeader header{TimeControl::Blitz, 1800, Color::Black};
    const auto empty = encode(v, std::vector<chess::Move>{}, header);
    CHECK(empty.tokens.size() == 4);
    CHECK(decode(v, empty).header == header);

    // Geometric but not legal from the start position.
    const std::vector<chess::Move> odd = {chess::parse_uci_move("e3e5")};
    CHECK_NOTHROW(encode(v, odd, header));

    const std::vector<chess::Move> bad = {chess::parse_uci_move("a1b3"), chess::parse_uci_move("a1h3")};
    try {
        encode(v, bad, header);
        FAIL("expected OutOfVocabulary");
    } catch (const OutOfVocabulary& e) {
        CHECK(std::string(e.what()).find("a1h3") != std::string::npos);
    }

    for (const auto& g : random_games(200, 160, 5)) {
        for (Color c : {Color::White, Color::Black}) {
            const SequenceHeader h{g.time_control, g.elo_of(c), c};
            const auto d = decode(v, encode(v, g.moves, h));
            CHECK(d.moves == g.moves);
            CHECK(d.header == SequenceHeader{g.time_control, elo_bucket(g.elo_of(c)), c});
        }
    }
}

TEST_CASE("corpus JSONL and token file round-trip") {
    const auto games = random_games(30, 120, 11);
    std::stringstream jl;
    write_corpus_jsonl(jl, games);
    const auto back = read_corpus_jsonl(jl);
    REQUIRE(back.size() == games.size());
    for (std::size_t i = 0; i < games.size(); ++i) {
        CHECK(back[i].moves == games[i].moves);
        CHECK(back[i].white_elo == games[i].white_elo);
    }

    std::vector<TokenSequence> seqs;
    for (const auto& g : games) {
        auto [w, b] = build_sequences(standard_vocabulary(), g);
        seqs.push_back(w);
        seqs.push_back(b);
    }
    std::stringstream bin;
    write_token_file(bin, seqs);
    const auto recs = read_token_file(bin);
    REQUIRE(recs.size() == seqs.size());
    for (std::size_t i = 0; i < seqs.size(); ++i) CHECK(recs[i] == seqs[i].tokens);

    const auto st = length_stats(games);
    CHECK(st.sequences == 60);
    CHECK(st.p995_length <= static_cast<double>(st.max_length));
}
