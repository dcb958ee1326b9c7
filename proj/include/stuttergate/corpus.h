#pragma once

#include "stuttergate/framing.h"

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace stuttergate {

enum class StutterType {
    Revision,
    Interjection,
    DysrhythmicPhonation,
    Block,
    PhonemeRepetition,
    PartWordRepetition,
    WordRepetition,
    PhraseRepetition,
};

inline constexpr std::array<StutterType, 8> kAllStutterTypes = {
    StutterType::Revision,          StutterType::Interjection,       StutterType::DysrhythmicPhonation,
    StutterType::Block,             StutterType::PhonemeRepetition,  StutterType::PartWordRepetition,
    StutterType::WordRepetition,    StutterType::PhraseRepetition,
};

/// Annotation tag: R, I, D, B, P, PW, W, PH.
std::string_view stutter_tag(StutterType type);
std::optional<StutterType> stutter_type_from_tag(std::string_view tag);
std::string_view stutter_name(StutterType type);

struct StutterEvent {
    std::int64_t onset_ms = 0;
    std::int64_t offset_ms = 0;
    StutterType kind = StutterType::WordRepetition;

    std::int64_t duration_ms() const { return offset_ms - onset_ms; }
    bool operator==(const StutterEvent&) const = default;
};

/// Parses "[onset] [TAG] [offset]" signatures, one per line. Blank lines are
/// skipped. Result is sorted by onset.
std::vector<StutterEvent> parse_annotations(std::string_view text);
std::string serialize_annotations(const std::vector<StutterEvent>& events);

struct FrameLabelTrack {
    std::string utterance_id;
    std::vector<std::uint8_t> labels;
};

struct LabelResult {
    FrameLabelTrack track;
    std::vector<std::string> warnings;
};

inline constexpr std::int64_t kLabelOverlapMs = 50;

/// labels[i] = 1 iff frame [100i, 100i+100) ms overlaps the union of events by
/// at least 50 ms. Events past the end are clipped and reported in warnings.
LabelResult label_frames(const std::vector<StutterEvent>& events, std::size_t n_frames);

enum class SeverityBand { Normal, Mild, Moderate, Severe, VerySevere };

inline constexpr std::array<SeverityBand, 5> kAllSeverityBands = {
    SeverityBand::Normal, SeverityBand::Mild, SeverityBand::Moderate, SeverityBand::Severe,
    SeverityBand::VerySevere};

std::string_view severity_name(SeverityBand band);
std::optional<SeverityBand> severity_from_name(std::string_view name);

/// Half-open bands: [0,1%) Normal, [1,6%) Mild, [6,13%) Moderate,
/// [13,20%) Severe, [20%,100%] VerySevere.
SeverityBand severity(double stutter_fraction);
/// Lower/upper fraction bounds of a band (upper exclusive except VerySevere).
std::pair<double, double> severity_bounds(SeverityBand band);

// ---------------------------------------------------------------------------
// Synthetic corpus.

struct SynthConfig {
    std::uint64_t seed = 7;
    std::size_t n_utts = 100;
    std::string id_prefix = "utt";
    /// Weights per band; must be non-negative and sum to 1.
    std::map<SeverityBand, double> severity_mix = {{SeverityBand::VerySevere, 1.0}};
    /// Every utterance must carry at least one stutter event.
    bool force_events = false;
    std::size_t min_tokens = 4;
    std::size_t max_tokens = 20;
    double max_stutter_fraction = 0.5;
    int token_ms = 300;
    int gap_ms = 100;
    double noise_std = 0.002;
    /// Chance that a token repeats its predecessor in the fluent transcript.
    double repeat_probability = 0.25;
    /// Relative weights of generated event kinds.
    double weight_word_repetition = 1.0;
    double weight_part_word_repetition = 1.0;
    double weight_phoneme_repetition = 1.0;
    double weight_prolongation = 1.0;
    double weight_block = 1.0;

    void validate() const;
};

struct SynthUtterance {
    std::string id;
    AudioBuffer audio;
    std::vector<std::string> transcript;
    std::vector<StutterEvent> events;
    SeverityBand band = SeverityBand::Normal;
    double stutter_fraction = 0.0;
    std::size_t n_tokens = 0;
};

const std::vector<std::string>& synth_vocabulary();

/// Band assigned to each utterance index: largest-remainder quotas of the mix,
/// deterministically shuffled by seed.
std::vector<SeverityBand> assign_bands(const SynthConfig& cfg);

/// Deterministic in (cfg.seed, index); utterances may be built in parallel.
SynthUtterance synth_utterance(const SynthConfig& cfg, std::size_t index, SeverityBand band);

std::vector<SynthUtterance> synth_corpus(const SynthConfig& cfg, std::size_t jobs = 1);

// ---------------------------------------------------------------------------
// Manifest: one JSON object per line.

struct ManifestRecord {
    std::string id;
    std::string split;
    std::string wav;         // relative to the corpus root
    std::string annotation;  // relative to the corpus root
    std::vector<std::string> transcript;
    SeverityBand band = SeverityBand::Normal;
    double stutter_fraction = 0.0;
    std::size_t n_tokens = 0;
    std::vector<StutterEvent> events;
};

std::string manifest_line(const ManifestRecord& rec);
ManifestRecord parse_manifest_line(std::string_view line);
std::vector<ManifestRecord> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestRecord>& records);

} // namespace stuttergate
