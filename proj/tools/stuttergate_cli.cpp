#include "stuttergate/config.h"
#include "stuttergate/detail/binary_io.h"
#include "stuttergate/pipeline.h"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <optional>

using namespace stuttergate;

namespace {

struct GlobalFlags {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> jobs;
    std::string out;
    bool force = false;
    bool quiet = false;
};

RunConfig effective_config(const GlobalFlags& g) {
    RunConfig cfg;
    bool out_in_file = false;
    if (!g.config.empty()) {
        cfg = load_run_config(g.config);
        const auto doc = nlohmann::json::parse(detail::read_text_file(g.config));
        out_in_file = doc.contains("out");
    }
    if (!g.out.empty()) {
        cfg.out = g.out;
    } else if (!out_in_file) {
        if (const char* env = std::getenv("STUTTERGATE_OUT"); env && *env) cfg.out = env;
    }
    if (g.seed) cfg.seed = *g.seed;
    if (g.jobs) cfg.jobs = *g.jobs;
    cfg.validate();
    return cfg;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Detect and Pass: stutter detection, frame gating and toy-transducer evaluation"};
    app.fallthrough();
    app.require_subcommand(1);
    GlobalFlags g;
    app.add_option("--config", g.config, "JSON run config")->check(CLI::ExistingFile);
    app.add_option("--seed", g.seed, "override the config seed");
    app.add_option("--jobs", g.jobs, "worker threads")->check(CLI::PositiveNumber);
    app.add_option("--out", g.out, "output root (default: $STUTTERGATE_OUT or ./stuttergate_out)");
    app.add_flag("--force", g.force, "overwrite existing stage outputs");
    app.add_flag("-q,--quiet", g.quiet, "no progress output");

    struct Command {
        const char* name;
        const char* help;
        void (*run)(const RunConfig&, const StageOptions&);
    };
    const Command commands[] = {
        {"synth", "generate the synthetic corpus (WAV + annotations + manifest)", run_synth},
        {"extract", "compute decoder features and classifier log-mel banks", run_extract},
        {"train-clf", "train the frame stutter classifier", run_train_classifier},
        {"eval-clf", "write posterior tracks for the test split", run_eval_classifier},
        {"gate", "gate test features with classifier and oracle decisions", run_gate},
        {"train-asr", "train the toy transducer(s) on clean speech", run_train_asr},
        {"decode", "greedy-decode baseline, gated and oracle streams", run_decode},
        {"sweep", "LFR stacking with every vote policy", run_sweep},
        {"report", "CSV tables, markdown summary and SVG plots", run_report},
        {"pipeline", "every stage in order", run_pipeline},
    };
    for (const auto& c : commands) app.add_subcommand(c.name, c.help);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        const RunConfig cfg = effective_config(g);
        StageOptions opt;
        opt.force = g.force;
        if (!g.quiet) opt.log = [](const std::string& line) { std::fprintf(stderr, "%s\n", line.c_str()); };
        for (const auto& c : commands) {
            if (app.got_subcommand(c.name)) c.run(cfg, opt);
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
