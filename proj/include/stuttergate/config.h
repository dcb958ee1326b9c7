#pragma once

#include "stuttergate/classifier.h"
#include "stuttergate/corpus.h"
#include "stuttergate/features.h"
#include "stuttergate/gate.h"
#include "stuttergate/lfr.h"
#include "stuttergate/transducer.h"

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace stuttergate {

/// 44 mild / 364 moderate / 336 severe / 981 very severe, as fractions.
std::map<SeverityBand, double> reference_severity_mix();

struct CorpusSection {
    std::size_t asr_train = 1000;
    std::size_t asr_test = 100;
    std::size_t clf_train = 150;
    std::size_t test = 300;
    std::map<SeverityBand, double> severity_mix = reference_severity_mix();
    std::size_t min_tokens = 4;
    std::size_t max_tokens = 20;
    double max_stutter_fraction = 0.5;
    double repeat_probability = 0.25;
    double noise_std = 0.002;
};

struct ClassifierSection {
    ClassifierArch arch{};
    std::size_t epochs = 4;
    std::size_t batch_size = 32;
    double lr = 1e-3;
    double pos_weight = 0.0;
};

struct TransducerSection {
    std::size_t encoder_hidden = 128;
    std::size_t predictor_hidden = 64;
    std::size_t joint_hidden = 64;
    std::size_t emission_cap = 5;
    std::size_t epochs = 15;
    std::size_t batch_size = 2;
    double lr = 2e-3;
    double clip_norm = 5.0;
    bool cosine_decay = true;
    double input_noise = 0.3;
};

struct LfrSection {
    bool enabled = true;
    std::vector<VotePolicy> policies = default_policy_grid();
};

struct ReportSection {
    std::size_t overlay_count = 4;
};

struct RunConfig {
    std::uint64_t seed = 7;
    std::size_t jobs = 1;
    std::filesystem::path out = "stuttergate_out";
    CorpusSection corpus;
    MelConfig mel;
    ClassifierSection classifier;
    GateConfig gate;
    LfrSection lfr;
    TransducerSection transducer;
    ReportSection report;

    /// Throws Config errors; called before any stage runs.
    void validate() const;

    SynthConfig synth_config(const std::string& split) const;
    ClassifierTrainConfig classifier_train_config() const;
    TransducerArch transducer_arch(std::size_t input_dim, bool flag_input) const;
    TransducerTrainConfig transducer_train_config() const;
};

/// Unknown keys anywhere in the document are rejected. Missing keys keep
/// their defaults.
RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::filesystem::path& path);

/// Canonical JSON of every field, stable key order.
std::string dump_run_config(const RunConfig& cfg);

} // namespace stuttergate
