// Scripted UCI engine. Replies come from a JSON file keyed by FEN (full or
// the first four fields); unscripted positions use the material search.
//
// {"name": "mock", "positions": {"<fen>": {"cp": 34, "best": "e2e4"}}}
// entry keys: cp | mate, best, depth, lines (raw reply), delay_ms, crash
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "seqchess/engine.h"

using nlohmann::json;
using namespace seqchess;

namespace {

std::string short_fen(const std::string& fen) {
    std::istringstream in(fen);
    std::string out, w;
    for (int i = 0; i < 4 && in >> w; ++i) out += (i ? " " : "") + w;
    return out;
}

void say(const std::string& s) { std::cout << s << std::endl; }

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"mock UCI engine"};
    std::string script_path;
    app.add_option("--script", script_path, "JSON reply script");
    CLI11_PARSE(app, argc, argv);

    json script = json::object();
    if (!script_path.empty()) {
        std::ifstream in(script_path);
        if (!in) {
            std::cerr << "cannot open script " << script_path << "\n";
            return 2;
        }
        script = json::parse(in);
    }
    const json positions = script.value("positions", json::object());

    std::string fen = chess::to_fen(chess::BoardState::initial());
    std::string line;
    while (std::getline(std::cin, line)) {
        std::istringstream in(line);
        std::string cmd;
        in >> cmd;
        if (cmd == "uci") {
            say("id name " + script.value("name", std::string("mock")));
            say("id author test");
            say("uciok");
        } else if (cmd == "isready") {
            say("readyok");
        } else if (cmd == "quit") {
            return 0;
        } else if (cmd == "position") {
            std::string kind;
            in >> kind;
            if (kind == "startpos") {
                fen = chess::to_fen(chess::BoardState::initial());
            } else {
                std::string rest, w;
                while (in >> w && w != "moves") rest += (rest.empty() ? "" : " ") + w;
                fen = rest;
            }
        } else if (cmd == "go") {
            int depth = 2;
            for (std::string w; in >> w;)
                if (w == "depth") in >> depth;
            const json* entry = nullptr;
            if (positions.contains(fen)) entry = &positions[fen];
            else if (positions.contains(short_fen(fen))) entry = &positions[short_fen(fen)];
            if (entry) {
                if (entry->contains("delay_ms"))
                    std::this_thread::sleep_for(std::chrono::milliseconds((*entry)["delay_ms"].get<int>()));
                if (entry->value("crash", false)) std::_Exit(7);
                if (entry->contains("lines")) {
                    for (const auto& l : (*entry)["lines"]) say(l.get<std::string>());
                    continue;
                }
                const int d = entry->value("depth", depth);
                const std::string score = entry->contains("mate") ? "mate " + std::to_string((*entry)["mate"].get<int>())
                                                                  : "cp " + std::to_string(entry->value("cp", 0));
                say("info depth " + std::to_string(d) + " score " + score + " nodes 1 pv " + (*entry)["best"].get<std::string>());
                say("bestmove " + (*entry)["best"].get<std::string>());
                continue;
            }
            try {
                MaterialEngine m;
                SearchLimits lim;
                lim.depth = depth;
                const auto r = m.evaluate(chess::from_fen(fen), lim);
                const std::string score = r.mate_in ? "mate " + std::to_string(*r.mate_in) : "cp " + std::to_string(r.score);
                say("info depth " + std::to_string(r.depth) + " score " + score + " nodes " + std::to_string(r.nodes) + " pv " +
                    r.best.uci());
                say("bestmove " + r.best.uci());
            } catch (const std::exception&) {
                say("info depth 0 score mate 0");
                say("bestmove (none)");
            }
        }
    }
    return 0;
}
