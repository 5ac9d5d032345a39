#include "seqchess/cli.h"

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>

#include <CLI11.hpp>
#include <json.hpp>
#include <openssl/evp.h>

#include "seqchess/degeneration.h"
#include "seqchess/engine.h"
#include "seqchess/evaluation.h"
#include "seqchess/ingest.h"
#include "seqchess/match.h"
#include "seqchess/predictor.h"
#include "seqchess/process.h"
#include "seqchess/probes.h"
#include "seqchess/synth.h"
#include "seqchess/weighting.h"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace seqchess {

namespace {

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// JSON config: a flat object of flag names, or an object keyed by subcommand.
class JsonConfig : public CLI::Config {
public:
    explicit JsonConfig(std::string section) : section_(std::move(section)) {}

    std::string to_config(const CLI::App*, bool, bool, std::string) const override { return "{}"; }

    std::vector<CLI::ConfigItem> from_config(std::istream& in) const override {
        const auto j = json::parse(in);
        if (!j.is_object()) throw CLI::ConversionError("config file must hold a JSON object");
        std::vector<CLI::ConfigItem> items;
        auto add = [&](const std::string& key, const json& v) {
            CLI::ConfigItem item;
            if (!section_.empty()) item.parents = {section_};
            item.name = key;
            auto text = [](const json& x) { return x.is_string() ? x.get<std::string>() : x.dump(); };
            if (v.is_array()) {
                for (const auto& e : v) item.inputs.push_back(text(e));
            } else if (v.is_string() && v.get<std::string>().size() >= 2 && v.get<std::string>().front() == '[' &&
                       v.get<std::string>().back() == ']') {
                // vector defaults as recorded in a manifest, "[0,0.5,1]"
                const auto inner = v.get<std::string>().substr(1, v.get<std::string>().size() - 2);
                std::istringstream parts(inner);
                for (std::string e; std::getline(parts, e, ',');) item.inputs.push_back(e);
            } else {
                item.inputs.push_back(text(v));
            }
            items.push_back(std::move(item));
        };
        // A run manifest replays its recorded config.
        if (j.contains("subcommand") && j.contains("config") && j["config"].is_object()) {
            if (j["subcommand"] == section_)
                for (const auto& [k, v] : j["config"].items()) add(k, v);
            return items;
        }
        for (const auto& [k, v] : j.items()) {
            if (k == section_ && v.is_object()) {
                for (const auto& [k2, v2] : v.items()) add(k2, v2);
            } else if (!v.is_object()) {
                add(k, v);
            }
        }
        return items;
    }

private:
    std::string section_;
};

std::string utc_now() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::ostringstream s;
    s << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return s.str();
}

void write_file(const fs::path& p, const std::string& text) {
    std::ofstream f(p, std::ios::binary);
    f << text;
    if (!f) throw std::runtime_error("cannot write " + p.string());
}

std::ifstream open_input(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    if (!f) throw UsageError("cannot read " + p.string());
    return f;
}

std::optional<TimeControl> time_control_filter(const std::string& s) {
    if (s == "any") return std::nullopt;
    return time_control_from_string(s);
}

// One subcommand invocation: inputs, output directory, report and manifest.
struct Run {
    std::string name;
    CLI::App* app = nullptr;
    std::string out_dir;
    std::uint64_t seed = 0;
    unsigned workers = 1;
    std::vector<fs::path> inputs;
    std::string started;
    std::ofstream log;

    fs::path out() const { return fs::path(out_dir); }

    void begin() {
        for (const auto& p : inputs)
            if (!fs::is_regular_file(p)) throw UsageError("input not found: " + p.string());
        fs::create_directories(out() / "logs");
        log.open(out() / "logs" / "run.log");
        started = utc_now();
        note("start " + name);
    }

    void note(const std::string& line) { log << line << '\n'; }

    const fs::path& input(const std::string& p) {
        inputs.emplace_back(p);
        return inputs.back();
    }

    json resolved_config() const {
        json c = json::object();
        for (const auto* o : app->get_options()) {
            const auto key = o->get_single_name();
            if (key.empty() || key == "help") continue;
            if (o->count() > 0) {
                const auto& r = o->results();
                c[key] = r.size() == 1 && o->get_expected_max() <= 1 ? json(r.front()) : json(r);
            } else if (!o->get_default_str().empty()) {
                c[key] = o->get_default_str();
            }
        }
        return c;
    }

    void finish(const json& report) {
        write_file(out() / "report.json", report.dump(2) + "\n");
        json in = json::array();
        for (const auto& p : inputs)
            in.push_back({{"path", p.string()}, {"sha256", sha256_file(p)}, {"bytes", fs::file_size(p)}});
        json m{{"subcommand", name},  {"config", resolved_config()}, {"tool_version", kToolVersion},
               {"inputs", in},        {"seed", seed},                {"started_at", started},
               {"finished_at", utc_now()}};
        write_file(out() / "manifest.json", m.dump(2) + "\n");
        note("done");
    }
};

std::vector<GameRecord> load_corpus(const fs::path& p) {
    auto f = open_input(p);
    if (p.extension() == ".pgn") return parse_pgn(f);
    return read_corpus_jsonl(f);
}

WeightScheme make_scheme(const std::string& kind, double w_min, double r, double e_min, double e_max) {
    if (kind == "uniform") return WeightScheme::uniform();
    if (kind == "linear") return WeightScheme::linear(w_min, e_min, e_max);
    if (kind == "exponential") return WeightScheme::exponential(r, e_min, e_max);
    throw UsageError("unknown scheme: " + kind);
}

struct SchemeFlags {
    std::string kind = "uniform";
    double w_min = 0.05, r = 200, e_min = 1000, e_max = 2800;

    void attach(CLI::App* s) {
        s->add_option("--scheme", kind, "Elo weighting scheme")->check(CLI::IsMember({"uniform", "linear", "exponential"}));
        s->add_option("--w-min", w_min, "Linear scheme weight floor at e-min (intensity 1/w-min)");
        s->add_option("--r", r, "Exponential scheme intensity w(e-max)/w(e-min)");
        s->add_option("--e-min", e_min, "Lower Elo clamp of the weighting");
        s->add_option("--e-max", e_max, "Upper Elo clamp of the weighting");
    }
    WeightScheme build() const { return make_scheme(kind, w_min, r, e_min, e_max); }
};

// "ngram:PATH" or "cmd:COMMAND LINE".
PredictorFactory predictor_factory(const std::string& spec, Run& run) {
    if (spec.rfind("ngram:", 0) == 0) {
        const auto& path = run.input(spec.substr(6));
        if (!fs::is_regular_file(path)) throw UsageError("model not found: " + path.string());
        auto f = open_input(path);
        auto model = std::make_shared<const NGramModel>(NGramModel::load(f));
        return shared_ngram_factory(model);
    }
    if (spec.rfind("cmd:", 0) == 0) {
        ExternalPredictorConfig cfg;
        cfg.argv = split_command(spec.substr(4));
        if (cfg.argv.empty()) throw UsageError("empty predictor command");
        return [cfg] { return std::unique_ptr<Predictor>(new ExternalPredictor(cfg)); };
    }
    throw UsageError("predictor must be ngram:PATH or cmd:COMMAND, got " + spec);
}

std::string default_engine() {
    const char* e = std::getenv("SEQCHESS_ENGINE");
    return e && *e ? e : "material";
}

EngineFactory engine_factory(const std::string& spec) {
    return [spec] { return open_engine(spec); };
}

// ---- subcommands ----

json cmd_ingest(Run& run, const std::vector<std::string>& pgns, int min_elo, int max_elo, const std::string& tc,
                int min_plies) {
    for (const auto& p : pgns) run.input(p);
    run.begin();
    const auto filter = time_control_filter(tc);
    SkipCounters skips;
    std::vector<GameRecord> games;
    for (const auto& p : pgns) {
        auto f = open_input(p);
        PgnReader reader(f);
        while (auto g = reader.next()) {
            if (min_elo > 0 && (g->white_elo < min_elo || g->black_elo < min_elo)) {
                skips.add("filter_min_elo");
                continue;
            }
            if (max_elo > 0 && (g->white_elo > max_elo || g->black_elo > max_elo)) {
                skips.add("filter_max_elo");
                continue;
            }
            if (filter && g->time_control != *filter) {
                skips.add("filter_time_control");
                continue;
            }
            if (static_cast<int>(g->moves.size()) < min_plies) {
                skips.add("filter_min_plies");
                continue;
            }
            games.push_back(std::move(*g));
        }
        skips.merge(reader.skips());
        run.note("read " + p);
    }
    const auto& vocab = standard_vocabulary();
    std::vector<TokenSequence> seqs;
    for (const auto& g : games) {
        auto [w, b] = build_sequences(vocab, g);
        seqs.push_back(std::move(w));
        seqs.push_back(std::move(b));
    }
    {
        std::ofstream f(run.out() / "corpus.jsonl", std::ios::binary);
        write_corpus_jsonl(f, games);
    }
    {
        std::ofstream f(run.out() / "sequences.tok", std::ios::binary);
        write_token_file(f, seqs);
    }
    write_file(run.out() / "vocab.json", vocab.to_json().dump() + "\n");
    const auto ls = length_stats(games);
    return {{"games", games.size()},
            {"sequences", seqs.size()},
            {"skips", skips.to_json()},
            {"length", {{"truncated", ls.truncated}, {"p99_5", ls.p995_length}, {"max", ls.max_length}}},
            {"vocabulary_size", vocab.size()}};
}

json cmd_weights(Run& run, const std::string& corpus, const SchemeFlags& sf, const std::string& qmap, double theta,
                 double share_at) {
    run.input(corpus);
    if (!qmap.empty()) run.input(qmap);
    run.begin();
    const auto games = load_corpus(corpus);
    const auto scheme = sf.build();
    const auto sw = sequence_weights(games, scheme);
    {
        std::ofstream f(run.out() / "weights.txt", std::ios::binary);
        write_weights_file(f, sw.weights);
    }
    const double r = intensity(scheme);
    std::ostringstream ratio;
    ratio << std::llround(r) << ":1";
    json rep{{"scheme", scheme.to_json()},
             {"intensity", r},
             {"ratio", ratio.str()},
             {"sequences", sw.weights.size()},
             {"skipped_missing_elo", sw.skipped_missing_elo},
             {"gradient_share_threshold", share_at}};
    if (!games.empty()) rep["gradient_share"] = gradient_share(games, scheme, share_at);
    if (!qmap.empty()) {
        DatasetMetrics m;
        m.theta = theta;
        m.n_e = bucket_counts(games);
        auto f = open_input(qmap);
        std::string line;
        std::getline(f, line);  // header
        while (std::getline(f, line)) {
            if (line.empty()) continue;
            const auto comma = line.find(',');
            if (comma == std::string::npos) throw UsageError("quality map rows are bucket,quality");
            m.q_e[std::stoi(line.substr(0, comma))] = std::stod(line.substr(comma + 1));
        }
        m.div = effective_diversity(games, theta, scheme);
        m.qual = effective_quality(m, scheme);
        rep["div"] = m.div;
        rep["qual"] = m.qual;
        rep["theta"] = theta;
    }
    return rep;
}

json cmd_train(Run& run, const std::string& corpus, const SchemeFlags& sf, int order, double k) {
    run.input(corpus);
    run.begin();
    const auto games = load_corpus(corpus);
    const auto scheme = sf.build();
    const auto model = train_ngram(games, scheme, order, k);
    {
        std::ofstream f(run.out() / "model.bin", std::ios::binary);
        model.save(f);
    }
    std::uint64_t with_elo = 0;
    for (const auto& g : games) with_elo += g.white_elo > 0 && g.black_elo > 0;
    return {{"order", order},
            {"k", k},
            {"scheme", scheme.to_json()},
            {"intensity", intensity(scheme)},
            {"games", games.size()},
            {"games_used", with_elo},
            {"contexts", model.context_count()},
            {"total_mass", model.total_mass()}};
}

struct EvalFlags {
    std::string mode, corpus, predictor, engine = default_engine(), query = "argmax", tc = "any";
    int depth = 8;
    std::size_t quota = 1000;
    double tau = 100, temperature = 1.0;
};

json cmd_eval(Run& run, const EvalFlags& e) {
    run.input(e.corpus);
    const auto make = predictor_factory(e.predictor, run);
    run.begin();
    const auto games = load_corpus(e.corpus);
    const SearchLimits limits{e.depth, {}, {}};
    SampleConfig sc;
    sc.quota = e.quota;
    sc.seed = run.seed;
    sc.time_control = time_control_filter(e.tc);
    json rep{{"mode", e.mode}, {"predictor", e.predictor}};

    if (e.mode == "illegal") {
        IllegalRateConfig c;
        c.mode = e.query == "sample" ? QueryMode::Sample : QueryMode::Argmax;
        c.temperature = e.temperature;
        c.seed = run.seed;
        c.workers = static_cast<int>(run.workers);
        c.time_control = sc.time_control;
        const auto r = illegal_move_rate(make, games, c);
        rep["result"] = r.to_json();
        write_file(run.out() / "illegal.txt", r.report.to_text());
        return rep;
    }
    if (e.mode == "rep-exp") {
        const auto engines = engine_factory(e.engine);
        const auto r = repetition_experiment(games, make, &engines, limits, static_cast<int>(run.workers));
        rep["result"] = r.to_json();
        std::ofstream f(run.out() / "repetition.csv", std::ios::binary);
        r.write_csv(f);
        return rep;
    }

    const auto sampled = sample_decision_points(games, sc);
    rep["sampling"] = sampled.to_json();
    if (e.mode == "top1") {
        const auto r = top1_accuracy(make, sampled.points, sc.bands, static_cast<int>(run.workers));
        rep["result"] = r.to_json();
        write_file(run.out() / "top1.txt", r.to_text());
        return rep;
    }
    const auto pc = paired_cpl(engine_factory(e.engine), make, sampled.points, games, limits, static_cast<int>(run.workers));
    rep["engine"] = e.engine;
    rep["depth"] = e.depth;
    rep["unavailable"] = pc.unavailable;
    if (e.mode == "align") {
        rep["result"] = blunder_alignment(pc.human, pc.model, e.tau).to_json();
    } else {
        const auto prof = cpl_profile(pc.human, pc.model);
        rep["result"] = prof.to_json();
        std::ofstream f(run.out() / "profile.csv", std::ios::binary);
        prof.write_csv(f);
    }
    return rep;
}

struct DegenFlags {
    std::string pgn, corpus, side = "both", engine = default_engine();
    int depth = 8, span = 20;
    DetectorParams params;
    double n_games = 0, k_crit = 1;
};

json cmd_degen(Run& run, const DegenFlags& d) {
    if (d.pgn.empty() == d.corpus.empty()) throw UsageError("give exactly one of --pgn or --corpus");
    const std::string src = d.pgn.empty() ? d.corpus : d.pgn;
    run.input(src);
    run.begin();
    const auto games = load_corpus(src);
    std::vector<GameSeries> series;
    std::uint64_t engine_games = 0;
    std::unique_ptr<Engine> engine;
    for (const auto& g : games) {
        for (auto c : {chess::Color::White, chess::Color::Black}) {
            if ((d.side == "white" && c != chess::Color::White) || (d.side == "black" && c != chess::Color::Black)) continue;
            GameSeries s;
            s.game_id = g.id + (c == chess::Color::White ? ":w" : ":b");
            if (g.cpl.size() == g.moves.size() && !g.cpl.empty()) {
                for (std::size_t i = c == chess::Color::White ? 0 : 1; i < g.cpl.size(); i += 2) s.cpl.push_back(g.cpl[i]);
            } else {
                if (!engine) engine = open_engine(d.engine);
                s.cpl = side_cpl_series(*engine, g.moves, c, SearchLimits{d.depth, {}, {}});
                ++engine_games;
            }
            series.push_back(std::move(s));
        }
    }
    const auto results = analyze_games(series, d.params, run.workers);
    {
        std::ofstream f(run.out() / "games.jsonl", std::ios::binary);
        write_jsonl(f, results);
    }
    const auto summary = summarize(results, d.params);
    json rep{{"summary", summary.to_json()}, {"series", series.size()}, {"engine_series", engine_games}};
    json cliffs = json::object();
    if (summary.detected > 0) {
        for (auto m : {CliffMetric::BlunderProbability, CliffMetric::MeanCpl, CliffMetric::P95Cpl}) {
            const auto c = aligned_cliff(series, results, m, d.span, d.params.tau);
            std::ofstream f(run.out() / ("cliff_" + std::string(to_string(m)) + ".csv"), std::ios::binary);
            c.write_csv(f);
            cliffs[to_string(m)] = {{"pre_mean", c.pre_mean()}, {"post_mean", c.post_mean()}};
        }
    }
    rep["cliffs"] = cliffs;
    if (d.n_games > 0 && summary.median_t_deg && *summary.median_t_deg > 0) {
        const double b = fit_effective_branching(d.n_games, d.k_crit, *summary.median_t_deg);
        rep["coverage"] = {{"n_games", d.n_games}, {"k_crit", d.k_crit}, {"median_t_deg", *summary.median_t_deg},
                           {"effective_branching", b}};
    }
    return rep;
}

struct ProbeFlags {
    std::string dataset, corpus, predictor;
    std::size_t quota = 200;
    double train = 0.8, validation = 0.1;
    ProbeTrainConfig cfg;
};

json cmd_probe(Run& run, ProbeFlags p) {
    if (p.dataset.empty() == p.corpus.empty()) throw UsageError("give exactly one of --dataset or --corpus");
    ProbeDataset ds;
    if (!p.dataset.empty()) {
        run.input(p.dataset);
        run.begin();
        auto f = open_input(p.dataset);
        ds = ProbeDataset::load(f);
    } else {
        if (p.predictor.empty()) throw UsageError("--corpus needs --predictor");
        run.input(p.corpus);
        const auto make = predictor_factory(p.predictor, run);
        run.begin();
        const auto games = load_corpus(p.corpus);
        SampleConfig sc;
        sc.quota = p.quota;
        sc.seed = run.seed;
        const auto pts = sample_decision_points(games, sc).points;
        const auto index = StandardPositionIndex::build(games);
        ds = build_probe_dataset(make, pts, &index, run.workers);
        ds.assign_splits(run.seed, p.train, p.validation);
        std::ofstream f(run.out() / "dataset.bin", std::ios::binary);
        ds.save(f);
    }
    p.cfg.seed = run.seed;
    p.cfg.workers = run.workers;
    const auto sweep = layer_sweep(ds, p.cfg);
    {
        std::ofstream f(run.out() / "layers.csv", std::ios::binary);
        write_layer_csv(f, sweep);
    }
    json layers = json::array();
    for (const auto& r : sweep) layers.push_back(r.to_json());
    return {{"examples", ds.size()},
            {"train", ds.count(Split::Train)},
            {"validation", ds.count(Split::Validation)},
            {"test", ds.count(Split::Test)},
            {"training", p.cfg.to_json()},
            {"layers", layers}};
}

struct MatchFlags {
    std::string a, b, opening = "start", book_corpus, tc = "blitz";
    int games = 100, elo_a = 2500, elo_b = 2500, max_plies = 300, book_plies = 4;
    double temperature = 1.0;
    std::optional<double> temperature_a, temperature_b;
    bool no_alternate = false;
    std::vector<double> temperatures = {0.0, 0.5, 1.0};
};

MatchConfig match_config(Run& run, const MatchFlags& m, std::optional<OpeningBook>& book) {
    MatchConfig c;
    c.a = predictor_factory(m.a, run);
    c.b = predictor_factory(m.b, run);
    c.a_name = m.a;
    c.b_name = m.b;
    c.games = m.games;
    c.temperature_a = m.temperature_a.value_or(m.temperature);
    c.temperature_b = m.temperature_b.value_or(m.temperature);
    c.elo_a = m.elo_a;
    c.elo_b = m.elo_b;
    c.time_control = time_control_from_string(m.tc);
    c.max_plies = m.max_plies;
    c.seed = run.seed;
    c.alternate_colors = !m.no_alternate;
    c.workers = run.workers;
    if (m.opening == "book") {
        if (m.book_corpus.empty()) throw UsageError("--opening book needs --book-corpus");
        run.input(m.book_corpus);
    }
    try {
        c.validate();
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    run.begin();
    if (m.opening == "book") {
        const auto games = load_corpus(m.book_corpus);
        book = OpeningBook::build(games, m.book_plies);
        c.book = &*book;
    }
    return c;
}

json cmd_match(Run& run, const MatchFlags& m) {
    std::optional<OpeningBook> book;
    const auto c = match_config(run, m, book);
    const auto r = run_match(c);
    std::ofstream f(run.out() / "games.pgn", std::ios::binary);
    r.write_pgn(f);
    return r.to_json();
}

json cmd_sweep(Run& run, const MatchFlags& m) {
    std::optional<OpeningBook> book;
    const auto c = match_config(run, m, book);
    const auto s = temperature_sweep(c, m.temperatures);
    write_file(run.out() / "sweep.txt", s.to_text());
    return s.to_json();
}

json cmd_capfit(Run& run, const std::string& csv, const std::string& tm, const std::string& dm) {
    run.input(csv);
    run.begin();
    auto f = open_input(csv);
    std::string line;
    if (!std::getline(f, line)) throw UsageError("empty capability CSV");
    std::vector<CapabilityObservation> t, q;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::istringstream row(line);
        std::string r, tv, qv;
        if (!std::getline(row, r, ',') || !std::getline(row, tv, ',') || !std::getline(row, qv, ','))
            throw UsageError("capability CSV rows are r,T,Q");
        t.push_back({std::stod(r), std::stod(tv)});
        q.push_back({std::stod(r), std::stod(qv)});
    }
    return capability_report(fit_capability_lines(t, q), tm, dm);
}

json cmd_synth(Run& run, const SynthConfig& c, const std::string& format) {
    run.begin();
    const auto games = synth_corpus(c, run.workers);
    if (format == "pgn") {
        std::ofstream f(run.out() / "corpus.pgn", std::ios::binary);
        for (const auto& g : games) write_pgn(f, g);
    } else {
        std::ofstream f(run.out() / "corpus.jsonl", std::ios::binary);
        write_corpus_jsonl(f, games);
    }
    std::uint64_t plies = 0;
    for (const auto& g : games) plies += g.moves.size();
    return {{"config", c.to_json()}, {"games", games.size()}, {"plies", plies}, {"format", format}};
}

}  // namespace

std::string sha256_file(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    if (!f) throw std::runtime_error("cannot read " + p.string());
    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
    EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr);
    char buf[1 << 16];
    while (f.read(buf, sizeof buf) || f.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf, static_cast<std::size_t>(f.gcount()));
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx.get(), md, &len);
    std::ostringstream s;
    for (unsigned i = 0; i < len; ++i) s << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
    return s.str();
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Move-sequence chess model analysis toolkit", "seqchess"};
    app.require_subcommand(1);
    app.fallthrough();
    app.option_defaults()->always_capture_default();
    app.set_version_flag("--version", kToolVersion);

    // The subcommand decides where flat config keys go.
    static const std::set<std::string> kSubcommands = {"ingest", "weights", "train-ngram", "eval",   "degen",
                                                       "probe",  "match",   "sweep",       "capfit", "synth"};
    std::string section;
    for (std::size_t i = 1; i < args.size(); ++i)
        if (kSubcommands.count(args[i])) {
            section = args[i];
            break;
        }
    app.config_formatter(std::make_shared<JsonConfig>(section));
    app.set_config("--config", "", "JSON config file; flags given on the command line take precedence");

    Run run;
    std::function<json()> action;
    auto common = [&](CLI::App* s, const std::string& name) {
        s->add_option("--out", run.out_dir, "Output directory for report.json, manifest.json and logs/")->required();
        s->add_option("--seed", run.seed, "Top-level seed; every random stream is derived from it");
        s->add_option("--workers", run.workers, "Worker threads; results do not depend on it")->check(CLI::PositiveNumber);
        s->callback([&run, s, name] {
            run.name = name;
            run.app = s;
        });
    };

    // ingest
    std::vector<std::string> pgns;
    int min_elo = 0, max_elo = 0, min_plies = 1;
    std::string ingest_tc = "any";
    auto* ing = app.add_subcommand("ingest", "Parse PGN files into a corpus, token sequences and a skip report");
    common(ing, "ingest");
    ing->add_option("--pgn", pgns, "PGN input files")->required();
    ing->add_option("--min-elo", min_elo, "Drop games with either rating below this (0 keeps all)");
    ing->add_option("--max-elo", max_elo, "Drop games with either rating above this (0 keeps all)");
    ing->add_option("--time-control", ingest_tc, "Keep only this time control")->check(CLI::IsMember({"any", "bullet", "blitz", "other"}));
    ing->add_option("--min-plies", min_plies, "Drop games shorter than this many plies");

    // weights
    std::string w_corpus, qmap;
    SchemeFlags w_scheme;
    double theta = 1.0, share_at = 2000;
    auto* wts = app.add_subcommand("weights", "Per-sequence Elo weights and scheme statistics");
    common(wts, "weights");
    wts->add_option("--corpus", w_corpus, "Corpus (.jsonl from ingest, or .pgn)")->required();
    w_scheme.attach(wts);
    wts->add_option("--q-map", qmap, "CSV bucket,quality; enables the Div and Qual metrics");
    wts->add_option("--theta", theta, "Exposure a position needs to count towards Div");
    wts->add_option("--share-threshold", share_at, "Elo at or above which gradient share is reported");

    // train-ngram
    std::string t_corpus;
    SchemeFlags t_scheme;
    int order = 4;
    double k = 0.01;
    auto* trn = app.add_subcommand("train-ngram", "Train the built-in weighted n-gram predictor");
    common(trn, "train-ngram");
    trn->add_option("--corpus", t_corpus, "Corpus (.jsonl or .pgn)")->required();
    t_scheme.attach(trn);
    trn->add_option("--order", order, "n-gram order (context is order-1 moves)")->check(CLI::Range(1, 5));
    trn->add_option("--k", k, "Add-k smoothing constant")->check(CLI::PositiveNumber);

    // eval
    EvalFlags ev;
    auto* evl = app.add_subcommand("eval", "Illegal-move rate, top-1, blunder alignment, CPL profile or repetition experiment");
    common(evl, "eval");
    evl->add_option("--mode", ev.mode, "Analysis to run")->required()->check(CLI::IsMember({"illegal", "top1", "align", "cpl-profile", "rep-exp"}));
    evl->add_option("--corpus", ev.corpus, "Evaluation corpus (.jsonl or .pgn)")->required();
    evl->add_option("--predictor", ev.predictor, "ngram:MODEL or cmd:COMMAND")->required();
    evl->add_option("--engine", ev.engine, "'material' or a UCI engine command (default from SEQCHESS_ENGINE)");
    evl->add_option("--depth", ev.depth, "Engine search depth");
    evl->add_option("--quota", ev.quota, "Decision points per Elo band x phase cell");
    evl->add_option("--tau", ev.tau, "Blunder threshold in CPL for alignment");
    evl->add_option("--query", ev.query, "Illegal-rate query mode")->check(CLI::IsMember({"argmax", "sample"}));
    evl->add_option("--temperature", ev.temperature, "Sampling temperature for --query sample");
    evl->add_option("--time-control", ev.tc, "Restrict decision points to a time control")->check(CLI::IsMember({"any", "bullet", "blitz", "other"}));

    // degen
    DegenFlags dg;
    auto* deg = app.add_subcommand("degen", "Per-game degeneration points, aligned cliffs and coverage fit");
    common(deg, "degen");
    deg->add_option("--pgn", dg.pgn, "Games with [%cpl] annotations (others are analysed with the engine)");
    deg->add_option("--corpus", dg.corpus, "Corpus (.jsonl) instead of PGN");
    deg->add_option("--side", dg.side, "Which side's moves form a series")->check(CLI::IsMember({"white", "black", "both"}));
    deg->add_option("--tau", dg.params.tau, "Catastrophic blunder threshold in CPL");
    deg->add_option("--window", dg.params.window, "Sliding window width in moves")->check(CLI::PositiveNumber);
    deg->add_option("--theta", dg.params.theta, "Windowed blunder rate that counts as high risk");
    deg->add_option("--sustain", dg.params.sustain, "Consecutive high-risk windows required")->check(CLI::PositiveNumber);
    deg->add_option("--span", dg.span, "Relative steps either side of t_deg in the cliff curves");
    deg->add_option("--engine", dg.engine, "Engine for games without annotations");
    deg->add_option("--depth", dg.depth, "Engine search depth");
    deg->add_option("--n-games", dg.n_games, "Training-set size N for the effective branching fit (0 skips it)");
    deg->add_option("--k-crit", dg.k_crit, "Minimum support threshold for the branching fit");

    // probe
    ProbeFlags pf;
    auto* prb = app.add_subcommand("probe", "Linear board-state probes per hidden layer");
    common(prb, "probe");
    prb->add_option("--dataset", pf.dataset, "Probe dataset file");
    prb->add_option("--corpus", pf.corpus, "Build the dataset from decision points of this corpus");
    prb->add_option("--predictor", pf.predictor, "cmd:COMMAND exposing hidden states");
    prb->add_option("--quota", pf.quota, "Decision points per cell when building the dataset");
    prb->add_option("--train-fraction", pf.train, "Train split fraction");
    prb->add_option("--validation-fraction", pf.validation, "Validation split fraction");
    prb->add_option("--epochs", pf.cfg.epochs, "Gradient descent epochs");
    prb->add_option("--lr", pf.cfg.learning_rate, "Learning rate");
    prb->add_option("--batch", pf.cfg.batch, "Mini-batch size");
    prb->add_option("--l2", pf.cfg.l2, "L2 penalty");

    // match and sweep share flags
    MatchFlags mf;
    auto match_flags = [&](CLI::App* s) {
        s->add_option("--a", mf.a, "Predictor A: ngram:MODEL or cmd:COMMAND")->required();
        s->add_option("--b", mf.b, "Predictor B: ngram:MODEL or cmd:COMMAND")->required();
        s->add_option("--games", mf.games, "Games to play")->check(CLI::PositiveNumber);
        s->add_option("--elo-a", mf.elo_a, "Elo header token for A's sequences");
        s->add_option("--elo-b", mf.elo_b, "Elo header token for B's sequences");
        s->add_option("--time-control", mf.tc, "Time-control header token")->check(CLI::IsMember({"bullet", "blitz", "other"}));
        s->add_option("--opening", mf.opening, "Start position or sampled book prefixes")->check(CLI::IsMember({"start", "book"}));
        s->add_option("--book-corpus", mf.book_corpus, "Corpus the opening book is drawn from");
        s->add_option("--book-plies", mf.book_plies, "Opening prefix length in plies");
        s->add_option("--max-plies", mf.max_plies, "Adjudicate a draw after this many plies");
        s->add_flag("--no-alternate", mf.no_alternate, "Keep A on White in every game");
    };
    auto* mat = app.add_subcommand("match", "Head-to-head match with a binomial test on decisive games");
    common(mat, "match");
    match_flags(mat);
    mat->add_option("--temperature", mf.temperature, "Sampling temperature for both sides");
    mat->add_option("--temperature-a", mf.temperature_a, "Override A's temperature");
    mat->add_option("--temperature-b", mf.temperature_b, "Override B's temperature");
    auto* swp = app.add_subcommand("sweep", "The same match repeated at several temperatures with shared seeds");
    common(swp, "sweep");
    match_flags(swp);
    swp->add_option("--temperatures", mf.temperatures, "Temperatures to sweep");

    // capfit
    std::string cap_csv, tm = "probe_accuracy", dm = "top1";
    auto* cap = app.add_subcommand("capfit", "Fit tracking and decision capability lines in ln r and their crossover");
    common(cap, "capfit");
    cap->add_option("--csv", cap_csv, "CSV with header and rows r,T,Q")->required();
    cap->add_option("--tracking-metric", tm, "Name of the tracking metric in the CSV");
    cap->add_option("--decision-metric", dm, "Name of the decision metric in the CSV");

    // synth
    SynthConfig sc;
    std::string format = "pgn";
    auto* syn = app.add_subcommand("synth", "Write a synthetic rating-dependent corpus");
    common(syn, "synth");
    syn->add_option("--games", sc.games, "Games to generate");
    syn->add_option("--elo-lo", sc.elo_lo, "Lowest rating");
    syn->add_option("--elo-hi", sc.elo_hi, "Highest rating");
    syn->add_option("--elo-mean", sc.elo_mean, "Mean rating");
    syn->add_option("--elo-sd", sc.elo_sd, "Rating spread; 0 or less draws ratings uniformly");
    syn->add_option("--skill-lo", sc.skill_lo, "Book-move probability at the lowest rating");
    syn->add_option("--skill-hi", sc.skill_hi, "Book-move probability at the highest rating");
    syn->add_option("--habit", sc.habit, "Chance that an off-book move is the shared habit move");
    syn->add_option("--elo-gap", sc.elo_gap, "Largest rating difference inside a game");
    syn->add_option("--min-plies", sc.min_plies, "Shortest game");
    syn->add_option("--max-plies", sc.max_plies, "Longest game");
    syn->add_flag("--annotate-cpl", sc.annotate_cpl, "Attach planted [%cpl] annotations with a blunder-rate step");
    syn->add_option("--format", format, "Output format")->check(CLI::IsMember({"pgn", "jsonl"}));

    std::vector<std::string> argv_rev(args.rbegin(), args.rend());
    if (!argv_rev.empty()) argv_rev.pop_back();  // program name
    try {
        app.parse(argv_rev);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        app.exit(e, out, err);
        return 2;
    }

    try {
        sc.seed = run.seed;
        const auto& n = run.name;
        json rep;
        if (n == "ingest") rep = cmd_ingest(run, pgns, min_elo, max_elo, ingest_tc, min_plies);
        else if (n == "weights") rep = cmd_weights(run, w_corpus, w_scheme, qmap, theta, share_at);
        else if (n == "train-ngram") rep = cmd_train(run, t_corpus, t_scheme, order, k);
        else if (n == "eval") rep = cmd_eval(run, ev);
        else if (n == "degen") rep = cmd_degen(run, dg);
        else if (n == "probe") rep = cmd_probe(run, pf);
        else if (n == "match") rep = cmd_match(run, mf);
        else if (n == "sweep") rep = cmd_sweep(run, mf);
        else if (n == "capfit") rep = cmd_capfit(run, cap_csv, tm, dm);
        else if (n == "synth") rep = cmd_synth(run, sc, format);
        run.finish(rep);
        out << (run.out() / "report.json").string() << '\n';
        return 0;
    } catch (const UsageError& e) {
        err << "seqchess " << run.name << ": " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        err << "seqchess " << run.name << ": " << e.what() << '\n';
        if (run.log.is_open()) run.note(std::string("error: ") + e.what());
        return 1;
    }
}

}  // namespace seqchess
