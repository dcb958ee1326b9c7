#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace stuttergate {

inline constexpr int kSampleRate = 16000;
inline constexpr int kFrameMs = 100;
inline constexpr std::size_t kFrameSamples = kSampleRate * kFrameMs / 1000;  // 1600
inline constexpr std::size_t kContextLeft = 4;
inline constexpr std::size_t kContextRight = 4;
inline constexpr std::size_t kContextFrames = kContextLeft + 1 + kContextRight;
inline constexpr std::size_t kContextSamples = kContextFrames * kFrameSamples;  // 14400

/// Mono utterance. Samples are int16 PCM divided by 32768.
struct AudioBuffer {
    std::vector<float> samples;
    int sample_rate = kSampleRate;

    double duration_ms() const {
        return 1000.0 * static_cast<double>(samples.size()) / sample_rate;
    }
};

float pcm16_to_float(std::int16_t v);
/// Round-to-nearest with saturation; exact inverse of pcm16_to_float.
std::int16_t float_to_pcm16(float v);

struct FrameIndexing {
    int frame_len_ms = kFrameMs;
    std::size_t frame_len_samples = kFrameSamples;
    std::size_t n_frames = 0;
    std::size_t last_frame_pad = 0;
};

using Frame = std::vector<float>;

struct FrameSplit {
    std::vector<Frame> frames;
    FrameIndexing indexing;
};

/// Non-overlapping 100 ms frames; the final partial frame is zero padded.
FrameSplit split_frames(const AudioBuffer& audio);

/// Inverse of split_frames: concatenates frames and drops the trailing pad.
std::vector<float> join_frames(const FrameSplit& split);

std::size_t frame_count(std::size_t n_samples);

struct ContextWindow {
    std::size_t center_index = 0;
    std::vector<float> merged;  // kContextSamples samples, left to right
};

/// Nine frames around `center`, concatenated left to right. Neighbours outside
/// the utterance repeat the first/last frame.
ContextWindow context_window(std::span<const Frame> frames, std::size_t center);

/// Whole-utterance signal with 4 replicated frames on each side. The context
/// window of frame i is exactly samples [i*1600, i*1600 + 14400) of this signal.
std::vector<float> edge_padded_signal(std::span<const Frame> frames);

void validate_audio(const AudioBuffer& audio);

// WAV: RIFF/WAVE, PCM 16-bit LE, mono, 16 kHz only.
AudioBuffer read_wav(const std::filesystem::path& path);
AudioBuffer decode_wav(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_wav(const AudioBuffer& audio);
void write_wav(const std::filesystem::path& path, const AudioBuffer& audio);

} // namespace stuttergate
