// Acceptance run: one PASS/FAIL line per criterion, then supplementary
// empirical checks. Usage: acceptance <work_dir>

#include "oracles.h"

#include "stuttergate/config.h"
#include "stuttergate/detail/binary_io.h"
#include "stuttergate/features.h"
#include "stuttergate/metrics.h"
#include "stuttergate/pipeline.h"
#include "stuttergate/report.h"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <map>
#include <numbers>

using namespace stuttergate;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, double v) {
    char buf[96];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

void print(const std::string& label, const Outcome& o) {
    std::printf("%-16s %s  %s\n", label.c_str(), o.pass ? "PASS" : "FAIL", o.detail.c_str());
    std::fflush(stdout);
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::map<std::string, std::string> metric_table(const fs::path& csv) {
    std::map<std::string, std::string> out;
    for (const auto& r : read_csv(csv))
        if (r.size() == 2) out[r[0]] = r[1];
    return out;
}

const std::vector<std::string>* find_row(const std::vector<std::vector<std::string>>& rows, const std::string& table,
                                         const std::string& system) {
    for (const auto& r : rows)
        if (r.size() > 3 && r[0] == table && r[1] == system) return &r;
    return nullptr;
}

struct Timings {
    double classifier = 0.0;  // synth through eval-clf
    double total = 0.0;
};

Timings run_timed(const RunConfig& cfg) {
    StageOptions opt;
    opt.force = true;
    opt.log = [](const std::string& line) { std::fprintf(stderr, "%s\n", line.c_str()); };
    Timings t;
    const auto t0 = std::chrono::steady_clock::now();
    run_synth(cfg, opt);
    run_extract(cfg, opt);
    run_train_classifier(cfg, opt);
    run_eval_classifier(cfg, opt);
    t.classifier = seconds_since(t0);
    run_gate(cfg, opt);
    run_train_asr(cfg, opt);
    run_decode(cfg, opt);
    run_sweep(cfg, opt);
    run_report(cfg, opt);
    t.total = seconds_since(t0);
    return t;
}

Outcome classifier_quality(const RunConfig& cfg, const Timings& t) {
    const Layout L{cfg.out};
    std::size_t n_test = 0;
    for (const auto& r : read_manifest(L.manifest())) n_test += r.split == "test";
    const double auc = std::stod(metric_table(L.reports() / "classifier.csv").at("pr_auc"));
    Outcome o;
    o.pass = auc > 0.75 && n_test >= 300 && t.classifier < 300.0;
    o.detail = "PR-AUC " + fmt("%.4f", auc) + " on " + std::to_string(n_test) + " held-out utterances, " +
               fmt("%.0f", t.classifier) + " s through eval-clf";
    return o;
}

Outcome direction_of_effect(const RunConfig& cfg, const Timings& t) {
    const auto rows = read_csv(Layout{cfg.out}.reports() / "werr.csv");
    const auto* base = find_row(rows, "main", "baseline");
    const auto* gated = find_row(rows, "main", "gated_skip");
    const auto* oracle = find_row(rows, "oracle", "oracle_skip");
    Outcome o;
    if (!base || !gated || !oracle) {
        o.detail = "werr.csv lacks the skip-mode rows";
        return o;
    }
    const double g = std::stod((*gated)[3]), orc = std::stod((*oracle)[3]);
    o.pass = g > 0.0 && orc >= 20.0 && t.total < 900.0;
    o.detail = "baseline WER " + fmt("%.4f", std::stod((*base)[2])) + ", classifier-gated WERR " + fmt("%.2f", g) +
               "%, oracle-gated WERR " + fmt("%.2f", orc) + "%, full pipeline " + fmt("%.0f", t.total) + " s";
    return o;
}

Outcome lfr_ordering(const RunConfig& cfg) {
    // Per-utterance rates straight from the sweep statistics.
    std::map<std::string, std::map<std::string, double>> per_utt;
    for (const auto& r : read_csv(Layout{cfg.out}.lfr_stats())) {
        if (r[0] == "id") continue;
        const double n = std::stod(r[2]), f = std::stod(r[3]);
        per_utt[r[0]][r[1]] = n > 0 ? f / n : 0.0;
    }
    const double grid[] = {0.2, 0.4, 0.5, 0.6, 0.8, 0.9};
    std::size_t order_bad = 0, ave_bad = 0;
    for (const auto& [id, rate] : per_utt) {
        if (!(rate.at("any_0") <= rate.at("majority") && rate.at("majority") <= rate.at("any_1"))) ++order_bad;
        for (std::size_t k = 1; k < std::size(grid); ++k) {
            if (rate.at(VotePolicy::ave(grid[k]).name()) > rate.at(VotePolicy::ave(grid[k - 1]).name())) {
                ++ave_bad;
                break;
            }
        }
    }

    Rng rng(2024);
    std::size_t mismatches = 0;
    const auto policies = default_policy_grid();
    for (int s = 0; s < 100000; ++s) {
        std::array<double, 3> p;
        std::array<std::uint8_t, 3> d;
        for (int k = 0; k < 3; ++k) {
            p[k] = rng.uniform() < 0.15 ? 0.5 : rng.uniform();
            d[k] = p[k] >= 0.5;
        }
        for (const auto& pol : policies) mismatches += vote(d, p, pol) != oracles::oracle_vote(d, p, pol);
    }
    Outcome o;
    o.pass = !per_utt.empty() && order_bad == 0 && ave_bad == 0 && mismatches == 0;
    o.detail = std::to_string(per_utt.size()) + " utterances: " + std::to_string(order_bad) + " ordering and " +
               std::to_string(ave_bad) + " ave_th violations; " + std::to_string(mismatches) +
               " vote mismatches on 100000 random stacks";
    return o;
}

Outcome transducer_loss_checks() {
    using namespace oracles::rnnt;
    Rng rng(404);
    double path_err = 0.0;
    for (std::size_t T = 1; T <= 4; ++T) {
        for (std::size_t U = 0; U <= 4; ++U) {
            const auto nets = random_nets(tiny_arch(), 1000 + 10 * T + U);
            const auto f = random_features(T, 2, rng);
            const auto y = random_target(U, 3, rng);
            std::size_t n_paths = 0;
            const double total = enumerate_paths(nets, f, y, &n_paths);
            path_err = std::max(path_err, std::abs(-std::log(total) - transducer_loss(nets, f, y).nll));
        }
    }
    double grad_err = 0.0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        auto nets = random_nets(tiny_arch(), 2000 + seed);
        const auto f = random_features(static_cast<std::size_t>(rng.uniform_int(2, 6)), 2, rng);
        const auto y = random_target(static_cast<std::size_t>(rng.uniform_int(0, 4)), 3, rng);
        TensorSet g = nets.params.like(0.0);
        transducer_loss(nets, f, y, &g);
        const double h = 1e-5;
        for (std::size_t t = 0; t < nets.params.tensors().size(); ++t) {
            auto& values = nets.params.tensors()[t].data;
            for (std::size_t i = 0; i < values.size(); ++i) {
                const double orig = values[i];
                values[i] = orig + h;
                const double up = transducer_loss(nets, f, y).nll;
                values[i] = orig - h;
                const double down = transducer_loss(nets, f, y).nll;
                values[i] = orig;
                const double numeric = (up - down) / (2 * h), analytic = g.tensors()[t].data[i];
                grad_err = std::max(grad_err, std::abs(numeric - analytic) /
                                                  std::max({std::abs(numeric), std::abs(analytic), 1e-6}));
            }
        }
    }
    Outcome o;
    o.pass = path_err <= 1e-8 && grad_err <= 1e-4;
    o.detail = "path-sum max |diff| " + fmt("%.2e", path_err) + " over T,U <= 4; gradient max rel error " +
               fmt("%.2e", grad_err) + " over 10 seeds";
    return o;
}

Outcome classifier_backprop() {
    using namespace oracles::clf;
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto s = random_state(tiny_arch(), 3000 + seed);
        Rng rng(seed, 7);
        const auto x = random_input(s.arch, rng);
        worst = std::max(worst, grad_check(s, x, seed % 2 ? 1.0 : 0.0).max_rel_error);
    }
    auto zero = init_classifier(ClassifierArch{}, 5);
    zero_classifier_weights(zero);
    Rng rng(8);
    std::vector<double> x(zero.arch.input_size());
    for (double& v : x) v = rng.uniform(-3, 3);
    const double p = forward(zero, x);
    Outcome o;
    o.pass = worst <= 1e-4 && p == 0.5;
    o.detail = "grad_check max rel error " + fmt("%.2e", worst) + " over 20 seeds; zero-weight posterior " + fmt("%.17g", p);
    return o;
}

Outcome metrics_oracles() {
    Rng rng(505);
    std::size_t wer_bad = 0;
    for (int k = 0; k < 500; ++k) {
        auto ref = oracles::random_tokens(rng, 12);
        if (ref.empty()) ref.push_back("a");
        const auto hyp = oracles::random_tokens(rng, 12);
        const auto r = wer(ref, hyp);
        const auto c = oracles::matrix_counts(ref, hyp);
        wer_bad += r.errors() != oracles::recursive_distance(ref, hyp) || r.substitutions + r.deletions + r.insertions !=
                                                                               c.s + c.d + c.i;
    }
    double auc_err = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> p(1000);
        std::vector<std::uint8_t> y(1000);
        for (std::size_t k = 0; k < p.size(); ++k) {
            y[k] = rng.uniform() < 0.3;
            const double raw = 0.6 * rng.uniform() + (y[k] ? 0.3 : 0.0);
            p[k] = trial % 2 ? std::round(raw * 50) / 50 : raw;
        }
        y[0] = 1;
        auc_err = std::max(auc_err, std::abs(pr_auc(p, y).pr_auc - oracles::brute_average_precision(p, y)));
    }
    const double w = werr(0.30, 0.20).werr_reduction;
    Outcome o;
    o.pass = wer_bad == 0 && auc_err <= 1e-9 && std::abs(w - 33.33) < 0.005;
    o.detail = std::to_string(wer_bad) + "/500 WER mismatches; PR-AUC max |diff| " + fmt("%.2e", auc_err) +
               " on 20 sets of 1000; werr(0.30, 0.20) = " + fmt("%.2f", w);
    return o;
}

Outcome dsp_checks() {
    std::vector<float> sine(14400);
    for (std::size_t n = 0; n < sine.size(); ++n)
        sine[n] = static_cast<float>(0.5 * std::sin(2 * std::numbers::pi * 1000.0 * double(n) / 16000.0));
    const auto p = stft_power(sine);
    bool all_32 = true;
    for (std::size_t r = 0; r < p.rows; ++r) {
        const auto row = p.row(r);
        all_32 = all_32 && std::max_element(row.begin(), row.end()) - row.begin() == 32;
    }
    const auto x = oracles::random_signal(6000, 77);
    const auto q = stft_power(x);
    double parseval = 0.0;
    for (std::size_t r = 0; r < q.rows; ++r) {
        double time_energy = 0.0;
        for (std::size_t n = 0; n < 400; ++n) {
            const double v = x[r * 200 + n] * (0.54 - 0.46 * std::cos(2 * std::numbers::pi * double(n) / 399.0));
            time_energy += v * v;
        }
        double freq_energy = q.at(r, 0) + q.at(r, 256);
        for (std::size_t k = 1; k < 256; ++k) freq_energy += 2.0 * q.at(r, k);
        parseval = std::max(parseval, std::abs(freq_energy / 512.0 - time_energy) / time_energy);
    }
    Outcome o;
    o.pass = all_32 && parseval <= 1e-6 && p.rows == 71;
    o.detail = std::string("1 kHz argmax bin 32 on every row: ") + (all_32 ? "yes" : "no") + "; Parseval max rel " +
               fmt("%.2e", parseval) + "; 14400 samples -> " + std::to_string(p.rows) + " rows";
    return o;
}

Outcome labeler_checks() {
    const auto ev = parse_annotations("[2367] [W] [4372]");
    const bool parsed = ev.size() == 1 && ev[0] == StutterEvent{2367, 4372, StutterType::WordRepetition};
    Rng rng(606);
    std::size_t bad = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const auto n_frames = static_cast<std::size_t>(rng.uniform_int(1, 60));
        const auto events = oracles::random_events(rng, static_cast<std::int64_t>(n_frames) * 100 + 300);
        bad += label_frames(events, n_frames).track.labels != oracles::per_ms_labels(events, n_frames);
    }
    const auto band = severity(0.15);
    Outcome o;
    o.pass = parsed && bad == 0 && band == SeverityBand::Severe;
    o.detail = std::string("parse ") + (parsed ? "exact" : "wrong") + "; " + std::to_string(bad) +
               "/1000 label mismatches; severity(0.15) = " + std::string(severity_name(band));
    return o;
}

std::vector<fs::path> files_under(const fs::path& root) {
    std::vector<fs::path> out;
    for (const auto& e : fs::recursive_directory_iterator(root))
        if (e.is_regular_file() && e.path().filename() != "config.json") out.push_back(fs::relative(e.path(), root));
    std::sort(out.begin(), out.end());
    return out;
}

Outcome determinism(const RunConfig& first, const fs::path& rerun_out) {
    RunConfig again = first;
    again.out = rerun_out;
    run_timed(again);
    const auto a = files_under(first.out), b = files_under(again.out);
    std::size_t differ = 0;
    if (a == b) {
        for (const auto& rel : a)
            differ += detail::read_text_file(first.out / rel) != detail::read_text_file(again.out / rel);
    }
    std::size_t reports = 0;
    for (const auto& rel : a) reports += rel.begin()->string() == "reports";
    Outcome o;
    o.pass = a == b && differ == 0 && reports > 0;
    o.detail = std::to_string(a.size()) + " output files (" + std::to_string(reports) + " in reports/), " +
               std::to_string(differ) + " differ" + (a == b ? "" : "; file lists differ");
    return o;
}

Outcome clean_transcripts(const RunConfig& cfg) {
    const auto m = metric_table(Layout{cfg.out}.reports() / "asr_clean.csv");
    const double acc = std::stod(m.at("sentence_accuracy"));
    Outcome o;
    o.pass = acc >= 0.95;
    o.detail = "exact transcripts on " + m.at("utterances") + " held-out clean utterances: " + fmt("%.3f", acc) +
               " (target 0.95), clean WER " + fmt("%.4f", std::stod(m.at("wer")));
    return o;
}

Outcome block_detection(const RunConfig& cfg) {
    const TrainState state = load_classifier(Layout{cfg.out}.checkpoints() / "classifier.sgck");
    SynthConfig sc = cfg.synth_config("test");
    sc.seed = 99;
    sc.weight_word_repetition = sc.weight_part_word_repetition = sc.weight_phoneme_repetition = 0.0;
    sc.weight_prolongation = 0.0;
    sc.weight_block = 1.0;
    std::size_t found = 0, ok = 0, flagged_total = 0;
    for (std::size_t i = 0; i < 5000 && found < 20; ++i) {
        const auto u = synth_utterance(sc, i, SeverityBand::Moderate);
        if (u.events.size() != 1 || u.events[0].kind != StutterType::Block || u.events[0].duration_ms() != 500) continue;
        ++found;
        const auto track = predict_track(u.audio, state, cfg.mel);
        const auto first = static_cast<std::size_t>(u.events[0].onset_ms / 100);
        std::size_t flagged = 0;
        for (std::size_t f = first; f < first + 5 && f < track.size(); ++f) flagged += track.decisions[f];
        flagged_total += flagged;
        ok += flagged >= 3;
    }
    Outcome o;
    o.pass = found > 0 && ok == found;
    o.detail = std::to_string(ok) + "/" + std::to_string(found) + " utterances with one 500 ms block flag >= 3 of its 5 frames (" +
               fmt("%.2f", found ? double(flagged_total) / double(found) : 0.0) + " flagged on average)";
    return o;
}

} // namespace

int main(int argc, char** argv) {
    if (argc != 2) {
        std::fprintf(stderr, "usage: acceptance <work_dir>\n");
        return 2;
    }
    const fs::path work = argv[1];
    fs::remove_all(work);
    RunConfig cfg;
    cfg.out = work / "run";

    std::map<int, Outcome> results;
    try {
        const Timings t = run_timed(cfg);
        results[1] = classifier_quality(cfg, t);
        results[2] = direction_of_effect(cfg, t);
        results[3] = lfr_ordering(cfg);
    } catch (const std::exception& e) {
        for (int c : {1, 2, 3}) results[c] = {false, std::string("pipeline failed: ") + e.what()};
    }
    results[4] = transducer_loss_checks();
    results[5] = classifier_backprop();
    results[6] = metrics_oracles();
    results[7] = dsp_checks();
    results[8] = labeler_checks();
    try {
        results[9] = determinism(cfg, work / "rerun");
    } catch (const std::exception& e) {
        results[9] = {false, std::string("rerun failed: ") + e.what()};
    }

    bool all = true;
    for (const auto& [c, o] : results) {
        print("criterion " + std::to_string(c), o);
        all = all && o.pass;
    }
    try {
        print("supplementary a", clean_transcripts(cfg));
        print("supplementary b", block_detection(cfg));
    } catch (const std::exception& e) {
        print("supplementary", {false, e.what()});
    }
    std::printf("%s\n", all ? "all criteria PASS" : "some criteria FAIL");
    return all ? 0 : 1;
}
