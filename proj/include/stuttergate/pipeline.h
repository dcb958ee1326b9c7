#pragma once

#include "stuttergate/config.h"

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace stuttergate {

/// Fixed output layout under the run root.
struct Layout {
    std::filesystem::path root;

    std::filesystem::path corpus() const { return root / "corpus"; }
    std::filesystem::path manifest() const { return corpus() / "manifest.jsonl"; }
    std::filesystem::path features() const { return root / "features"; }
    std::filesystem::path checkpoints() const { return root / "checkpoints"; }
    std::filesystem::path decodes() const { return root / "decodes"; }
    std::filesystem::path reports() const { return root / "reports"; }
    std::filesystem::path sentinel() const { return root / "INCOMPLETE"; }
    std::filesystem::path config_echo() const { return root / "config.json"; }

    std::filesystem::path decoder_features(const std::string& split, const std::string& id) const {
        return features() / split / (id + ".dec.sgft");
    }
    std::filesystem::path classifier_bank(const std::string& split, const std::string& id) const {
        return features() / split / (id + ".clf.sgft");
    }
    std::filesystem::path gated(const std::string& system, const std::string& id) const {
        return features() / ("gated_" + system) / (id + ".sgft");
    }
    std::filesystem::path gated_index(const std::string& system, const std::string& id) const {
        return features() / ("gated_" + system) / (id + ".csv");
    }
    std::filesystem::path hypotheses(const std::string& system) const { return decodes() / (system + ".jsonl"); }
    std::filesystem::path posteriors() const { return decodes() / "posteriors.jsonl"; }
    std::filesystem::path lfr_stats() const { return decodes() / "lfr_stats.csv"; }
};

struct StageOptions {
    bool force = false;
    /// Progress lines go here; null silences them.
    std::function<void(const std::string&)> log;
};

void run_synth(const RunConfig& cfg, const StageOptions& opt = {});
void run_extract(const RunConfig& cfg, const StageOptions& opt = {});
void run_train_classifier(const RunConfig& cfg, const StageOptions& opt = {});
void run_eval_classifier(const RunConfig& cfg, const StageOptions& opt = {});
void run_gate(const RunConfig& cfg, const StageOptions& opt = {});
void run_train_asr(const RunConfig& cfg, const StageOptions& opt = {});
void run_decode(const RunConfig& cfg, const StageOptions& opt = {});
void run_sweep(const RunConfig& cfg, const StageOptions& opt = {});
void run_report(const RunConfig& cfg, const StageOptions& opt = {});

/// Every stage in order. A failing stage leaves the INCOMPLETE sentinel
/// naming it and rethrows with the stage name prefixed.
void run_pipeline(const RunConfig& cfg, const StageOptions& opt = {});

/// Posterior tracks stored by eval-clf, one JSON object per line.
void write_posteriors(const std::filesystem::path& path, const std::vector<PosteriorTrack>& tracks);
std::vector<PosteriorTrack> read_posteriors(const std::filesystem::path& path);

} // namespace stuttergate
