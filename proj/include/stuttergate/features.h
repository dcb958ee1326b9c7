#pragma once

#include "stuttergate/framing.h"

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace stuttergate {

struct StftConfig {
    std::size_t win_len = 400;  // 25 ms
    std::size_t hop = 200;      // 12.5 ms
    std::size_t fft_size = 512;

    std::size_t n_bins() const { return fft_size / 2 + 1; }
    void validate() const;
};

struct MelConfig {
    std::size_t n_mels = 64;
    double f_min = 20.0;
    double f_max = 8000.0;
    double log_floor = 1e-10;

    void validate(int sample_rate = kSampleRate) const;
};

/// Row-major real matrix, one row per STFT frame (or per 100 ms frame on the
/// decoder path).
struct FeatureMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;
    std::string utterance_id;
    std::optional<std::size_t> center_frame;

    FeatureMatrix() = default;
    FeatureMatrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
    std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
    std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }
};

std::size_t stft_frame_count(std::size_t n_samples, const StftConfig& cfg = {});

std::vector<double> hamming_window(std::size_t n);

/// One-sided power spectrogram |X_k|^2, shape [T x fft_size/2+1]. Windows start
/// at sample 0 with no centering; each 400-sample window is zero padded to 512.
FeatureMatrix stft_power(std::span<const float> samples, const StftConfig& cfg = {});

/// Triangular HTK-mel filters with unit peak, shape [n_mels x n_bins].
FeatureMatrix mel_filterbank(const MelConfig& cfg = {}, const StftConfig& stft = {},
                             int sample_rate = kSampleRate);

/// Filterbank energies before the log, shape [T x n_mels].
FeatureMatrix mel_energies(const FeatureMatrix& power, const MelConfig& cfg = {});

/// log(filterbank . power + log_floor).
FeatureMatrix mel_project(const FeatureMatrix& power, const MelConfig& cfg = {});

inline constexpr std::size_t kRowsPerFrame = kFrameSamples / 200;      // 8
inline constexpr std::size_t kClassifierRows = (kContextSamples - 400) / 200 + 1;  // 71

/// Log-mel features of the context window around frame i: [71 x n_mels].
FeatureMatrix classifier_features(const AudioBuffer& audio, std::size_t i, const MelConfig& mel = {});

/// Log-mel of the edge padded utterance. Every classifier window is a
/// contiguous 71-row slice, so one STFT pass serves all frames.
struct ClassifierFeatureBank {
    FeatureMatrix logmel;
    std::size_t n_frames = 0;

    FeatureMatrix window(std::size_t i) const;
    std::span<const double> window_data(std::size_t i) const;
};

ClassifierFeatureBank classifier_feature_bank(const AudioBuffer& audio, const MelConfig& mel = {},
                                              const std::string& utterance_id = {});

/// Rebuilds a bank from its stored log-mel matrix (rows == 8 * n_frames + 63).
ClassifierFeatureBank bank_from_logmel(FeatureMatrix logmel);

/// Decoder input: per 100 ms frame, the mean log-mel vector of the frame's own
/// STFT rows. Shape [n_frames x n_mels].
FeatureMatrix decoder_features(const AudioBuffer& audio, const MelConfig& mel = {},
                               const std::string& utterance_id = {});

// "SGFT" feature file: magic, u16 version, u32 rows, u32 cols, f32 LE row-major.
inline constexpr std::uint16_t kFeatureFileVersion = 1;
std::vector<std::uint8_t> encode_feature_file(const FeatureMatrix& m);
FeatureMatrix decode_feature_file(std::span<const std::uint8_t> bytes);
void write_feature_file(const std::filesystem::path& path, const FeatureMatrix& m);
FeatureMatrix read_feature_file(const std::filesystem::path& path);

} // namespace stuttergate
