// Minimal predictor speaking the JSON-lines protocol, for tests and demos.
#include <chrono>
#include <iostream>
#include <string>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "seqchess/predictor.h"

using nlohmann::json;
using namespace seqchess;

namespace {

PredictionRecord fixed_record() {
    const auto& v = standard_vocabulary();
    PredictionRecord r;
    r.distribution = {{*v.find("e2e4"), 0.5}, {*v.find("d2d4"), 0.3}, {*v.find("g1f3"), 0.2}};
    std::sort(r.distribution.begin(), r.distribution.end());
    return r;
}

PredictionRecord uniform_legal(const std::vector<Token>& tokens) {
    const auto& v = standard_vocabulary();
    std::vector<chess::Move> moves;
    for (Token t : tokens)
        if (v.is_move(t)) moves.push_back(v.move_of(t));
    const auto legal = legal_tokens(v, chess::replay(moves).final_state);
    PredictionRecord r;
    for (Token t : legal) r.distribution.emplace_back(t, 1.0 / static_cast<double>(legal.size()));
    return r;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"stub predictor"};
    std::string mode = "fixed";
    int die_after = -1;
    int layers = 2;
    app.add_option("--mode", mode, "fixed | uniform-legal | unnormalized | hang")
        ->check(CLI::IsMember({"fixed", "uniform-legal", "unnormalized", "hang"}));
    app.add_option("--die-after", die_after, "exit after this many responses");
    app.add_option("--layers", layers);
    CLI11_PARSE(app, argc, argv);

    const auto& v = standard_vocabulary();
    std::cout << json{{"protocol", 1}, {"name", "stub-" + mode}, {"layers", layers}}.dump() << std::endl;
    std::string line;
    int served = 0;
    while (std::getline(std::cin, line)) {
        if (die_after >= 0 && served >= die_after) return 3;
        const auto req = json::parse(line);
        const auto id = req.at("id").get<std::uint64_t>();
        std::vector<Token> tokens;
        for (const auto& s : req.at("tokens")) tokens.push_back(v.find(s.get<std::string>()).value());
        if (mode == "hang") std::this_thread::sleep_for(std::chrono::hours(1));
        PredictionRecord rec = mode == "uniform-legal" ? uniform_legal(tokens) : fixed_record();
        if (mode == "unnormalized")
            for (auto& e : rec.distribution) e.second *= 1.5;
        if (req.value("want_hidden", false))
            for (int l = 0; l < layers; ++l) {
                HiddenState h{l, {}};
                for (int i = 0; i < 8; ++i) h.vec.push_back(static_cast<float>(tokens.size()) * 0.125f + l - i * 0.3f);
                rec.hidden.push_back(h);
            }
        std::cout << encode_response(v, id, rec).dump() << std::endl;
        ++served;
    }
}
