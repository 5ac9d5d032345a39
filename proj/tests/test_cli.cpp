#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <unistd.h>

#include <json.hpp>

#include "seqchess/cli.h"
#include "seqchess/ingest.h"
#include "seqchess/weighting.h"

using namespace seqchess;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

const char* kTwoGames = R"([Event "Rated Bullet game"]
[Site "https://lichess.org/abc123"]
[White "alice"]
[Black "bob"]
[Result "1-0"]
[WhiteElo "1523"]
[BlackElo "1490"]
[TimeControl "60+0"]

1. e4 e5 2. Nf3 Nc6 3. Bc4 Nf6 4. Ng5 d5 5. exd5 Nxd5 6. Nxf7 1-0

[Event "Rated Blitz game"]
[Site "https://lichess.org/def456"]
[White "carol"]
[Black "dave"]
[Result "0-1"]
[WhiteElo "2570"]
[BlackElo "2610"]
[TimeControl "180+2"]

1. f3 e5 2. g4 Qh4# 0-1
)";

struct Scratch {
    fs::path dir;
    Scratch() {
        static int n = 0;
        dir = fs::temp_directory_path() / ("seqchess_cli_" + std::to_string(::getpid()) + "_" + std::to_string(n++));
        fs::remove_all(dir);
        fs::create_directories(dir);
    }
    ~Scratch() { fs::remove_all(dir); }
    std::string operator/(const std::string& name) const { return (dir / name).string(); }
};

struct Outcome {
    int code;
    std::string out, err;
};

Outcome cli(std::vector<std::string> args) {
    args.insert(args.begin(), "seqchess");
    std::ostringstream o, e;
    const int code = run_cli(args, o, e);
    return {code, o.str(), e.str()};
}

void write(const std::string& path, const std::string& text) { std::ofstream(path, std::ios::binary) << text; }

std::string slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    std::ostringstream s;
    s << f.rdbuf();
    return s.str();
}

json report(const std::string& dir) { return json::parse(slurp(dir + "/report.json")); }

}  // namespace

TEST_CASE("ingest writes two sequences per game and a manifest") {
    Scratch s;
    write(s / "two.pgn", kTwoGames);
    const auto r = cli({"ingest", "--pgn", s / "two.pgn", "--out", s / "run"});
    REQUIRE(r.code == 0);
    const auto rep = report(s / "run");
    CHECK(rep["games"] == 2);
    CHECK(rep["sequences"] == 4);
    std::ifstream tok(s / "run/sequences.tok", std::ios::binary);
    CHECK(read_token_file(tok).size() == 4);
    CHECK(fs::exists(s / "run/vocab.json"));
    CHECK(fs::exists(s / "run/logs/run.log"));

    const auto m = json::parse(slurp(s / "run/manifest.json"));
    CHECK(m["subcommand"] == "ingest");
    CHECK(m["tool_version"] == kToolVersion);
    REQUIRE(m["inputs"].size() == 1);
    CHECK(m["inputs"][0]["sha256"] == sha256_file(s / "two.pgn"));
    CHECK(m["config"]["min-plies"] == "1");
}

TEST_CASE("sha256 of a known string") {
    Scratch s;
    write(s / "abc", "abc");
    CHECK(sha256_file(s / "abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("ingest edge cases") {
    Scratch s;
    write(s / "empty.pgn", "");
    auto r = cli({"ingest", "--pgn", s / "empty.pgn", "--out", s / "e"});
    REQUIRE(r.code == 0);
    CHECK(report(s / "e")["games"] == 0);
    CHECK(report(s / "e")["skips"]["skipped_total"] == 0);

    write(s / "bad.pgn", std::string("[Event \"z\"]\n[Site \"broken\n[WhiteElo \"1500\"]\n\n1. d4 *\n\n") + kTwoGames);
    r = cli({"ingest", "--pgn", s / "bad.pgn", "--out", s / "b"});
    REQUIRE(r.code == 0);
    const auto rep = report(s / "b");
    CHECK(rep["games"] == 2);
    CHECK(rep["skips"]["skipped"]["bad_tags"] == 1);

    r = cli({"ingest", "--pgn", s / "missing.pgn", "--out", s / "m"});
    CHECK(r.code == 2);
    CHECK(r.err.find("missing.pgn") != std::string::npos);

    r = cli({"ingest", "--pgn", s / "two.pgn", "--out", s / "x", "--no-such-flag"});
    CHECK(r.code == 2);
}

TEST_CASE("weights report intensity and the weight file") {
    Scratch s;
    write(s / "two.pgn", kTwoGames);
    REQUIRE(cli({"ingest", "--pgn", s / "two.pgn", "--out", s / "i"}).code == 0);

    REQUIRE(cli({"weights", "--corpus", s / "i/corpus.jsonl", "--out", s / "u"}).code == 0);
    CHECK(report(s / "u")["intensity"] == doctest::Approx(1.0));
    std::ifstream wf(s / "u/weights.txt");
    const auto w = read_weights_file(wf);
    REQUIRE(w.size() == 4);
    for (double x : w) CHECK(x == 1.0);

    REQUIRE(cli({"weights", "--corpus", s / "i/corpus.jsonl", "--scheme", "linear", "--w-min", "0.05", "--out", s / "l"})
                .code == 0);
    CHECK(report(s / "l")["intensity"] == doctest::Approx(20.0));
    CHECK(report(s / "l")["ratio"] == "20:1");

    write(s / "q.csv", "bucket,quality\n1500,0.4\n2500,0.9\n");
    REQUIRE(cli({"weights", "--corpus", s / "i/corpus.jsonl", "--q-map", s / "q.csv", "--out", s / "q"}).code == 0);
    const auto q = report(s / "q");
    // uniform weights, one game per bucket: the plain mean
    CHECK(q["qual"].get<double>() == doctest::Approx(0.65));
    CHECK(q["div"].get<int>() > 0);

    const auto r = cli({"weights", "--corpus", s / "nope.jsonl", "--out", s / "n"});
    CHECK(r.code == 2);
    CHECK(r.err.find("nope.jsonl") != std::string::npos);
}

TEST_CASE("config file values apply and flags win") {
    Scratch s;
    write(s / "two.pgn", kTwoGames);
    REQUIRE(cli({"ingest", "--pgn", s / "two.pgn", "--out", s / "i"}).code == 0);
    write(s / "cfg.json", R"({"weights": {"scheme": "linear", "w-min": 0.1}, "seed": 4})");
    REQUIRE(cli({"weights", "--config", s / "cfg.json", "--corpus", s / "i/corpus.jsonl", "--out", s / "a"}).code == 0);
    CHECK(report(s / "a")["intensity"] == doctest::Approx(10.0));
    REQUIRE(cli({"weights", "--config", s / "cfg.json", "--corpus", s / "i/corpus.jsonl", "--w-min", "0.05", "--out",
                 s / "b"})
                .code == 0);
    CHECK(report(s / "b")["intensity"] == doctest::Approx(20.0));
    CHECK(json::parse(slurp(s / "b/manifest.json"))["seed"] == 4);
}

TEST_CASE("match is byte-identical across runs, workers and manifest replay") {
    Scratch s;
    REQUIRE(cli({"synth", "--games", "300", "--seed", "2", "--out", s / "syn"}).code == 0);
    REQUIRE(cli({"train-ngram", "--corpus", s / "syn/corpus.pgn", "--order", "3", "--out", s / "t"}).code == 0);
    const std::string model = "ngram:" + (s / "t/model.bin");
    std::vector<std::string> args = {"match", "--a", model, "--b", model, "--games", "100", "--seed", "7"};
    auto run = [&](const std::string& out, const std::string& workers) {
        auto a = args;
        a.insert(a.end(), {"--out", out, "--workers", workers});
        return cli(a).code;
    };
    REQUIRE(run(s / "m1", "1") == 0);
    REQUIRE(run(s / "m2", "1") == 0);
    REQUIRE(run(s / "m3", "4") == 0);
    const auto first = slurp(s / "m1/report.json");
    CHECK(first == slurp(s / "m2/report.json"));
    CHECK(first == slurp(s / "m3/report.json"));
    CHECK(slurp(s / "m1/games.pgn") == slurp(s / "m3/games.pgn"));
    CHECK(report(s / "m1")["games"] == 100);

    REQUIRE(cli({"match", "--config", s / "m1/manifest.json", "--out", s / "m4"}).code == 0);
    CHECK(first == slurp(s / "m4/report.json"));
}

TEST_CASE("capfit agrees with a closed-form regression") {
    Scratch s;
    const double r[3] = {1, 20, 200};
    const double T[3] = {0.91, 0.62, 0.41};
    const double Q[3] = {0.28, 0.52, 0.61};
    std::ostringstream csv;
    csv << "r,T,Q\n";
    for (int i = 0; i < 3; ++i) csv << r[i] << ',' << T[i] << ',' << Q[i] << '\n';
    write(s / "cap.csv", csv.str());
    REQUIRE(cli({"capfit", "--csv", s / "cap.csv", "--out", s / "c"}).code == 0);
    const auto rep = report(s / "c");

    auto ols = [&](const double* y) {
        double mx = 0, my = 0;
        for (int i = 0; i < 3; ++i) mx += std::log(r[i]) / 3, my += y[i] / 3;
        double sxy = 0, sxx = 0;
        for (int i = 0; i < 3; ++i) {
            sxy += (std::log(r[i]) - mx) * (y[i] - my);
            sxx += (std::log(r[i]) - mx) * (std::log(r[i]) - mx);
        }
        const double slope = sxy / sxx;
        return std::pair{my - slope * mx, slope};
    };
    const auto [t0, ts] = ols(T);
    const auto [q0, qs] = ols(Q);
    CHECK(rep["T0"].get<double>() == doctest::Approx(t0).epsilon(1e-12));
    CHECK(rep["alpha_T"].get<double>() == doctest::Approx(-ts).epsilon(1e-12));
    CHECK(rep["Q0"].get<double>() == doctest::Approx(q0).epsilon(1e-12));
    CHECK(rep["beta_Q"].get<double>() == doctest::Approx(qs).epsilon(1e-12));
    CHECK(rep["r_star"].get<double>() == doctest::Approx(std::exp((t0 - q0) / (-ts + qs))).epsilon(1e-10));

    write(s / "bad.csv", "r,T,Q\n1,2\n");
    CHECK(cli({"capfit", "--csv", s / "bad.csv", "--out", s / "b"}).code == 2);
}

TEST_CASE("degen end to end on annotated synthetic games") {
    Scratch s;
    REQUIRE(cli({"synth", "--games", "150", "--seed", "5", "--annotate-cpl", "--min-plies", "60", "--out", s / "syn"})
                .code == 0);
    REQUIRE(cli({"degen", "--pgn", s / "syn/corpus.pgn", "--tau", "500", "--window", "5", "--out", s / "d"}).code == 0);
    const auto rep = report(s / "d");
    CHECK(rep["series"] == 300);
    CHECK(rep["engine_series"] == 0);
    CHECK(rep["summary"]["detected"].get<int>() > 240);

    std::ifstream jl(s / "d/games.jsonl");
    int lines = 0;
    for (std::string l; std::getline(jl, l);) {
        CHECK(json::parse(l).contains("t_deg"));
        ++lines;
    }
    CHECK(lines == 300);

    std::ifstream cliff(s / "d/cliff_blunder_probability.csv");
    std::string header;
    std::getline(cliff, header);
    CHECK(header == "relative_step,mean,ci_lo,ci_hi,n");
    int rows = 0;
    for (std::string l; std::getline(cliff, l);) ++rows;
    CHECK(rows == 41);
    const auto c = rep["cliffs"]["blunder_probability"];
    CHECK(c["pre_mean"].get<double>() < c["post_mean"].get<double>());

    CHECK(cli({"degen", "--out", s / "x"}).code == 2);
}

TEST_CASE("analysis failures exit 1") {
    Scratch s;
    write(s / "two.pgn", kTwoGames);
    REQUIRE(cli({"ingest", "--pgn", s / "two.pgn", "--out", s / "i"}).code == 0);
    write(s / "junk.bin", "not a model");
    const auto r = cli({"eval", "--mode", "top1", "--corpus", s / "i/corpus.jsonl", "--predictor",
                        "ngram:" + (s / "junk.bin"), "--out", s / "e"});
    CHECK(r.code == 1);
}

TEST_CASE("help lists defaults") {
    const auto r = cli({"degen", "--help"});
    CHECK(r.code == 0);
    CHECK(r.out.find("--window INT:POSITIVE [5]") != std::string::npos);
    CHECK(r.out.find("--tau FLOAT [500]") != std::string::npos);
}
