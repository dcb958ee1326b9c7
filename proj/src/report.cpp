#include "stuttergate/report.h"

#include "stuttergate/detail/binary_io.h"
#include "stuttergate/transducer.h"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

namespace stuttergate {

namespace fs = std::filesystem;

namespace {

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

std::string g17(double v) { return fmt("%.17g", v); }

void require(const fs::path& path, const std::string& stage) {
    if (!fs::exists(path)) {
        throw Error(ErrorKind::Io, path.string() + " not found; run the '" + stage + "' stage first");
    }
}

SystemScore score(const std::string& table, const std::string& system, const std::vector<ManifestRecord>& refs,
                  const fs::path& hyp_path, const std::string& stage) {
    require(hyp_path, stage);
    const auto hyps = read_hypotheses(hyp_path);
    if (hyps.size() != refs.size()) {
        throw Error(ErrorKind::Shape, hyp_path.string() + " has " + std::to_string(hyps.size()) +
                                          " hypotheses, expected " + std::to_string(refs.size()));
    }
    SystemScore s;
    s.table = table;
    s.system = system;
    for (std::size_t i = 0; i < refs.size(); ++i) {
        if (hyps[i].utterance_id != refs[i].id) {
            throw Error(ErrorKind::Shape, hyp_path.string() + ": hypothesis order does not match the manifest");
        }
        s.counts += wer(refs[i].transcript, hyps[i].tokens);
    }
    s.wer = s.counts.wer();
    return s;
}

void set_werr(std::vector<SystemScore>& rows, const std::string& table) {
    const auto base = std::find_if(rows.begin(), rows.end(), [&](const SystemScore& s) { return s.table == table; });
    if (base == rows.end()) return;
    const double b = base->wer;
    for (auto& r : rows) {
        if (r.table != table || &r == &*base) continue;
        r.werr = b > 0.0 ? werr(b, r.wer).werr_reduction : 0.0;
    }
}

constexpr double kPxPerMs = 0.1;

} // namespace

std::vector<std::vector<std::string>> read_csv(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
    std::vector<std::vector<std::string>> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (!line.empty() && line.back() == ',') cells.emplace_back();
        rows.push_back(std::move(cells));
    }
    return rows;
}

ReportData collect_report_data(const Layout& L, const RunConfig& cfg) {
    if (!fs::exists(L.root) || fs::is_empty(L.root)) {
        throw Error(ErrorKind::Io, L.root.string() + " holds no results; run the pipeline first");
    }
    require(L.manifest(), "synth");
    const auto all = read_manifest(L.manifest());
    std::vector<ManifestRecord> test, clean;
    for (const auto& r : all) {
        if (r.split == "test") test.push_back(r);
        if (r.split == "asr_test") clean.push_back(r);
    }

    ReportData d;
    require(L.posteriors(), "eval-clf");
    const auto tracks = read_posteriors(L.posteriors());
    if (tracks.size() != test.size()) throw Error(ErrorKind::Shape, "posteriors do not cover the test split; rerun 'eval-clf'");
    std::vector<double> post;
    std::vector<std::uint8_t> labels;
    for (std::size_t i = 0; i < test.size(); ++i) {
        const auto l = label_frames(test[i].events, tracks[i].size()).track.labels;
        post.insert(post.end(), tracks[i].posteriors.begin(), tracks[i].posteriors.end());
        labels.insert(labels.end(), l.begin(), l.end());
    }
    d.n_frames = post.size();
    d.n_positive = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
    d.pr_auc = pr_auc(post, labels).pr_auc;
    const fs::path history = L.checkpoints() / "classifier_history.csv";
    require(history, "train-clf");
    d.classifier_history = read_history_csv(history);

    {
        const auto s = score("clean", "asr_test", clean, L.hypotheses("asr_test"), "decode");
        d.clean = s.counts;
        d.clean_utterances = clean.size();
        const auto hyps = read_hypotheses(L.hypotheses("asr_test"));
        std::size_t exact = 0;
        for (std::size_t i = 0; i < clean.size(); ++i) exact += hyps[i].tokens == clean[i].transcript ? 1 : 0;
        d.clean_sentence_accuracy = clean.empty() ? 0.0 : static_cast<double>(exact) / static_cast<double>(clean.size());
    }

    const std::string mode(gate_mode_name(cfg.gate.mode));
    d.rows.push_back(score("main", "baseline", test, L.hypotheses("baseline"), "decode"));
    d.rows.push_back(score("main", "gated_" + mode, test, L.hypotheses("gated"), "decode"));
    d.rows.push_back(score("oracle", "baseline", test, L.hypotheses("baseline"), "decode"));
    d.rows.push_back(score("oracle", "oracle_" + mode, test, L.hypotheses("oracle"), "decode"));

    d.lfr = cfg.lfr.enabled;
    if (d.lfr) {
        d.rows.push_back(score("lfr", "lfr_baseline", test, L.hypotheses("lfr_baseline"), "sweep"));
        for (const auto& p : cfg.lfr.policies) {
            d.rows.push_back(score("lfr", p.name(), test, L.hypotheses("lfr_" + p.name()), "sweep"));
        }
        require(L.lfr_stats(), "sweep");
        const auto rows = read_csv(L.lfr_stats());
        std::map<std::string, LfrRate> totals;
        std::map<std::string, std::map<std::string, double>> per_utt;
        for (std::size_t r = 1; r < rows.size(); ++r) {
            if (rows[r].size() != 4) throw Error(ErrorKind::Parse, L.lfr_stats().string() + ": bad row");
            const std::size_t n = std::stoul(rows[r][2]), f = std::stoul(rows[r][3]);
            auto& t = totals[rows[r][1]];
            t.policy = rows[r][1];
            t.n_stacks += n;
            t.flagged += f;
            per_utt[rows[r][0]][rows[r][1]] = n ? static_cast<double>(f) / static_cast<double>(n) : 0.0;
        }
        for (const auto& p : cfg.lfr.policies) d.lfr_rates.push_back(totals[p.name()]);
        std::vector<VotePolicy> aves;
        for (const auto& p : cfg.lfr.policies) {
            if (p.kind == VoteKind::AveTh) aves.push_back(p);
        }
        std::sort(aves.begin(), aves.end(), [](const VotePolicy& a, const VotePolicy& b) { return a.threshold < b.threshold; });
        for (const auto& [id, rates] : per_utt) {
            if (rates.count("any_0") && rates.count("majority") && rates.count("any_1")) {
                if (!(rates.at("any_0") <= rates.at("majority") && rates.at("majority") <= rates.at("any_1"))) {
                    ++d.lfr_order_violations;
                }
            }
            for (std::size_t k = 1; k < aves.size(); ++k) {
                if (rates.at(aves[k].name()) > rates.at(aves[k - 1].name())) {
                    ++d.lfr_ave_violations;
                    break;
                }
            }
        }
    }
    for (const char* table : {"main", "oracle", "lfr"}) set_werr(d.rows, table);

    const std::size_t n_overlay = std::min(cfg.report.overlay_count, test.size());
    for (std::size_t k = 0; k < n_overlay; ++k) {
        const std::size_t i = k * test.size() / n_overlay;
        d.overlays.push_back({test[i].id, tracks[i], test[i].events});
    }
    return d;
}

std::string overlay_svg(const Overlay& o) {
    const double frame_px = 100.0 * kPxPerMs;
    const double width = static_cast<double>(o.track.size()) * frame_px + 80.0;
    std::string s;
    s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt("%.0f", width) +
         "\" height=\"150\" font-family=\"sans-serif\" font-size=\"11\">\n";
    s += "<title>" + o.id + ": prediction (green) vs ground truth (red)</title>\n";
    s += "<rect x=\"0\" y=\"0\" width=\"" + fmt("%.0f", width) + "\" height=\"150\" fill=\"white\"/>\n";
    s += "<text x=\"4\" y=\"32\">truth</text>\n<text x=\"4\" y=\"72\">pred</text>\n<text x=\"4\" y=\"122\">p</text>\n";
    const double x0 = 60.0;
    for (const auto& e : o.events) {
        s += "<rect class=\"truth\" data-start-ms=\"" + std::to_string(e.onset_ms) + "\" data-end-ms=\"" +
             std::to_string(e.offset_ms) + "\" x=\"" + fmt("%.1f", x0 + static_cast<double>(e.onset_ms) * kPxPerMs) +
             "\" y=\"20\" width=\"" + fmt("%.1f", static_cast<double>(e.duration_ms()) * kPxPerMs) +
             "\" height=\"20\" fill=\"#d62728\" fill-opacity=\"0.8\"/>\n";
    }
    for (std::size_t i = 0; i < o.track.size(); ++i) {
        if (!o.track.decisions[i]) continue;
        const std::size_t start = i * 100;
        s += "<rect class=\"prediction\" data-start-ms=\"" + std::to_string(start) + "\" data-end-ms=\"" +
             std::to_string(start + 100) + "\" x=\"" + fmt("%.1f", x0 + static_cast<double>(start) * kPxPerMs) +
             "\" y=\"60\" width=\"" + fmt("%.1f", frame_px) + "\" height=\"20\" fill=\"#2ca02c\" fill-opacity=\"0.8\"/>\n";
    }
    s += "<polyline fill=\"none\" stroke=\"#2ca02c\" stroke-width=\"1\" points=\"";
    for (std::size_t i = 0; i < o.track.size(); ++i) {
        const double x = x0 + (static_cast<double>(i) + 0.5) * frame_px;
        const double y = 140.0 - 40.0 * o.track.posteriors[i];
        s += fmt("%.1f", x) + "," + fmt("%.1f", y) + (i + 1 < o.track.size() ? " " : "");
    }
    s += "\"/>\n";
    s += "<line x1=\"" + fmt("%.1f", x0) + "\" y1=\"120\" x2=\"" + fmt("%.1f", width - 20.0) +
         "\" y2=\"120\" stroke=\"#999\" stroke-dasharray=\"3,3\"/>\n";
    s += "</svg>\n";
    return s;
}

std::string werr_svg(const std::vector<SystemScore>& rows) {
    std::vector<const SystemScore*> bars;
    for (const auto& r : rows) {
        if (r.system != "baseline" && r.system != "lfr_baseline") bars.push_back(&r);
    }
    double lo = 0.0, hi = 0.0;
    for (const auto* b : bars) {
        lo = std::min(lo, b->werr);
        hi = std::max(hi, b->werr);
    }
    if (hi - lo < 1e-9) hi = lo + 1.0;
    const double plot_h = 200.0, top = 30.0, bar_w = 40.0, gap = 20.0, left = 50.0;
    const double width = left + static_cast<double>(bars.size()) * (bar_w + gap) + gap;
    const double zero_y = top + plot_h * hi / (hi - lo);
    std::string s;
    s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt("%.0f", width) +
         "\" height=\"330\" font-family=\"sans-serif\" font-size=\"10\">\n";
    s += "<title>WERR (%) vs baseline</title>\n";
    s += "<rect x=\"0\" y=\"0\" width=\"" + fmt("%.0f", width) + "\" height=\"330\" fill=\"white\"/>\n";
    s += "<text x=\"4\" y=\"16\" font-size=\"12\">WERR (%)</text>\n";
    double x = left + gap;
    for (const auto* b : bars) {
        const double h = plot_h * std::abs(b->werr) / (hi - lo);
        const double y = b->werr >= 0.0 ? zero_y - h : zero_y;
        const char* color = b->table == "oracle" ? "#d62728" : b->table == "lfr" ? "#1f77b4" : "#2ca02c";
        s += "<rect x=\"" + fmt("%.1f", x) + "\" y=\"" + fmt("%.1f", y) + "\" width=\"" + fmt("%.1f", bar_w) +
             "\" height=\"" + fmt("%.1f", h) + "\" fill=\"" + color + "\"/>\n";
        s += "<text x=\"" + fmt("%.1f", x + bar_w / 2) + "\" y=\"" + fmt("%.1f", b->werr >= 0.0 ? y - 3.0 : y + h + 11.0) +
             "\" text-anchor=\"middle\">" + fmt("%.1f", b->werr) + "</text>\n";
        s += "<text x=\"" + fmt("%.1f", x + bar_w / 2) + "\" y=\"" + fmt("%.1f", top + plot_h + 20.0) +
             "\" text-anchor=\"end\" transform=\"rotate(-45 " + fmt("%.1f", x + bar_w / 2) + " " +
             fmt("%.1f", top + plot_h + 20.0) + ")\">" + b->system + "</text>\n";
        x += bar_w + gap;
    }
    s += "<line x1=\"" + fmt("%.1f", left) + "\" y1=\"" + fmt("%.1f", zero_y) + "\" x2=\"" + fmt("%.1f", width) +
         "\" y2=\"" + fmt("%.1f", zero_y) + "\" stroke=\"black\"/>\n";
    s += "</svg>\n";
    return s;
}

void write_report(const Layout& L, const RunConfig& cfg, const ReportData& d) {
    fs::create_directories(L.reports());
    for (const auto& entry : fs::directory_iterator(L.reports())) {
        if (entry.path().filename().string().starts_with("overlay_")) fs::remove(entry.path());
    }

    std::string csv = "table,system,wer,werr_percent,substitutions,deletions,insertions,ref_tokens\n";
    for (const auto& r : d.rows) {
        csv += r.table + "," + r.system + "," + g17(r.wer) + "," + g17(r.werr) + "," +
               std::to_string(r.counts.substitutions) + "," + std::to_string(r.counts.deletions) + "," +
               std::to_string(r.counts.insertions) + "," + std::to_string(r.counts.n_ref_tokens) + "\n";
    }
    detail::write_text_file(L.reports() / "werr.csv", csv);

    detail::write_text_file(L.reports() / "classifier.csv",
                            "metric,value\npr_auc," + g17(d.pr_auc) + "\nframes," + std::to_string(d.n_frames) +
                                "\npositive_frames," + std::to_string(d.n_positive) + "\n");
    detail::write_text_file(L.reports() / "asr_clean.csv",
                            "metric,value\nwer," + g17(d.clean.wer()) + "\nsentence_accuracy," +
                                g17(d.clean_sentence_accuracy) + "\nutterances," + std::to_string(d.clean_utterances) +
                                "\n");
    if (d.lfr) {
        std::string rates = "policy,n_stacks,flagged,flagged_rate\n";
        for (const auto& r : d.lfr_rates) {
            rates += r.policy + "," + std::to_string(r.n_stacks) + "," + std::to_string(r.flagged) + "," + g17(r.rate()) + "\n";
        }
        rates += "# order_violations=" + std::to_string(d.lfr_order_violations) +
                 " ave_violations=" + std::to_string(d.lfr_ave_violations) + "\n";
        detail::write_text_file(L.reports() / "lfr_rates.csv", rates);
    }

    std::string md = "# Detect and Pass report\n\n";
    md += "Seed " + std::to_string(cfg.seed) + ", gate mode `" + std::string(gate_mode_name(cfg.gate.mode)) + "`.\n\n";
    md += "## Classifier\n\n| metric | value |\n|---|---|\n";
    md += "| test PR-AUC | " + fmt("%.4f", d.pr_auc) + " |\n";
    md += "| test frames | " + std::to_string(d.n_frames) + " |\n";
    md += "| stutter frames | " + std::to_string(d.n_positive) + " |\n\n";
    md += "| epoch | loss | train PR-AUC |\n|---|---|---|\n";
    for (const auto& m : d.classifier_history) {
        md += "| " + std::to_string(m.epoch) + " | " + fmt("%.4f", m.loss) + " | " + fmt("%.4f", m.pr_auc) + " |\n";
    }
    md += "\n## Clean ASR\n\n| metric | value |\n|---|---|\n";
    md += "| WER | " + fmt("%.4f", d.clean.wer()) + " |\n";
    md += "| exact transcripts | " + fmt("%.4f", d.clean_sentence_accuracy) + " |\n\n";
    const std::pair<const char*, const char*> tables[] = {
        {"main", "Classifier gating"}, {"oracle", "Oracle gating (ground-truth labels)"}, {"lfr", "LFR vote policies"}};
    for (const auto& [key, title] : tables) {
        const bool any = std::any_of(d.rows.begin(), d.rows.end(), [&](const SystemScore& r) { return r.table == key; });
        if (!any) continue;
        md += std::string("## ") + title + "\n\n| system | WER | WERR (%) | S | D | I |\n|---|---|---|---|---|---|\n";
        for (const auto& r : d.rows) {
            if (r.table != key) continue;
            md += "| " + r.system + " | " + fmt("%.4f", r.wer) + " | " + fmt("%.2f", r.werr) + " | " +
                  std::to_string(r.counts.substitutions) + " | " + std::to_string(r.counts.deletions) + " | " +
                  std::to_string(r.counts.insertions) + " |\n";
        }
        md += "\n";
    }
    if (d.lfr) {
        md += "| policy | stacks | flagged | rate |\n|---|---|---|---|\n";
        for (const auto& r : d.lfr_rates) {
            md += "| " + r.policy + " | " + std::to_string(r.n_stacks) + " | " + std::to_string(r.flagged) + " | " +
                  fmt("%.4f", r.rate()) + " |\n";
        }
        md += "\nOrdering violations: " + std::to_string(d.lfr_order_violations) + " (any_0 <= majority <= any_1), " +
              std::to_string(d.lfr_ave_violations) + " (ave_th monotone).\n";
    }
    detail::write_text_file(L.reports() / "report.md", md);
    detail::write_text_file(L.reports() / "werr.svg", werr_svg(d.rows));
    for (const auto& o : d.overlays) detail::write_text_file(L.reports() / ("overlay_" + o.id + ".svg"), overlay_svg(o));
}

} // namespace stuttergate
