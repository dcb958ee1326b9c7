#pragma once

#include "stuttergate/classifier.h"
#include "stuttergate/config.h"
#include "stuttergate/corpus.h"
#include "stuttergate/metrics.h"
#include "stuttergate/pipeline.h"
#include "stuttergate/posterior.h"

#include <filesystem>
#include <string>
#include <vector>

namespace stuttergate {

/// One decoded system scored against the reference transcripts.
struct SystemScore {
    std::string table;   // main, oracle or lfr
    std::string system;  // baseline, gated_<mode>, oracle_<mode>, lfr_baseline, <policy>
    WerReport counts;
    double wer = 0.0;
    double werr = 0.0;   // vs the table's baseline row; 0 for the baseline itself
};

struct LfrRate {
    std::string policy;
    std::size_t n_stacks = 0;
    std::size_t flagged = 0;
    double rate() const { return n_stacks ? static_cast<double>(flagged) / static_cast<double>(n_stacks) : 0.0; }
};

struct Overlay {
    std::string id;
    PosteriorTrack track;
    std::vector<StutterEvent> events;
};

struct ReportData {
    double pr_auc = 0.0;
    std::size_t n_frames = 0;
    std::size_t n_positive = 0;
    std::vector<EpochMetrics> classifier_history;
    WerReport clean;
    double clean_sentence_accuracy = 0.0;
    std::size_t clean_utterances = 0;
    std::vector<SystemScore> rows;
    bool lfr = false;
    std::vector<LfrRate> lfr_rates;
    /// Utterances breaking any_0 <= majority <= any_1 on flagged-stack rate.
    std::size_t lfr_order_violations = 0;
    /// Utterances where an ave_th rate increases with th.
    std::size_t lfr_ave_violations = 0;
    std::vector<Overlay> overlays;
};

/// Reads every stage output; throws naming the missing stage. Writes nothing.
ReportData collect_report_data(const Layout& layout, const RunConfig& cfg);

/// reports/: werr.csv, classifier.csv, asr_clean.csv, lfr_rates.csv,
/// report.md, werr.svg and one overlay_<id>.svg per sampled utterance.
void write_report(const Layout& layout, const RunConfig& cfg, const ReportData& data);

/// Posterior track vs ground truth: one green 100 ms rectangle per flagged
/// frame, red spans for annotated events.
std::string overlay_svg(const Overlay& overlay);
std::string werr_svg(const std::vector<SystemScore>& rows);

/// Comma-separated rows; the header line is returned as the first row.
std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& path);

} // namespace stuttergate
