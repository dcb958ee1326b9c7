#include "stuttergate/framing.h"

#include "stuttergate/error.h"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

namespace stuttergate {

float pcm16_to_float(std::int16_t v) {
    return static_cast<float>(v) / 32768.0f;
}

std::int16_t float_to_pcm16(float v) {
    const double scaled = std::nearbyint(static_cast<double>(v) * 32768.0);
    return static_cast<std::int16_t>(std::clamp(scaled, -32768.0, 32767.0));
}

void validate_audio(const AudioBuffer& audio) {
    if (audio.sample_rate != kSampleRate) {
        throw Error(ErrorKind::UnsupportedFormat,
                    "sample_rate " + std::to_string(audio.sample_rate) + " Hz, expected 16000");
    }
    if (audio.samples.empty()) {
        throw Error(ErrorKind::EmptyInput, "audio has no samples");
    }
}

std::size_t frame_count(std::size_t n_samples) {
    return (n_samples + kFrameSamples - 1) / kFrameSamples;
}

FrameSplit split_frames(const AudioBuffer& audio) {
    validate_audio(audio);
    FrameSplit out;
    const std::size_t n = audio.samples.size();
    out.indexing.n_frames = frame_count(n);
    out.indexing.last_frame_pad = out.indexing.n_frames * kFrameSamples - n;
    out.frames.reserve(out.indexing.n_frames);
    for (std::size_t f = 0; f < out.indexing.n_frames; ++f) {
        const std::size_t begin = f * kFrameSamples;
        const std::size_t end = std::min(n, begin + kFrameSamples);
        Frame frame(kFrameSamples, 0.0f);
        std::copy(audio.samples.begin() + static_cast<std::ptrdiff_t>(begin),
                  audio.samples.begin() + static_cast<std::ptrdiff_t>(end), frame.begin());
        out.frames.push_back(std::move(frame));
    }
    return out;
}

std::vector<float> join_frames(const FrameSplit& split) {
    std::vector<float> out;
    out.reserve(split.frames.size() * kFrameSamples);
    for (const auto& frame : split.frames) {
        out.insert(out.end(), frame.begin(), frame.end());
    }
    out.resize(out.size() - split.indexing.last_frame_pad);
    return out;
}

ContextWindow context_window(std::span<const Frame> frames, std::size_t center) {
    if (center >= frames.size()) {
        throw Error(ErrorKind::OutOfRange, "frame index " + std::to_string(center) +
                                               " not in [0, " + std::to_string(frames.size()) + ")");
    }
    ContextWindow w;
    w.center_index = center;
    w.merged.reserve(kContextSamples);
    const auto last = static_cast<std::ptrdiff_t>(frames.size()) - 1;
    for (std::ptrdiff_t k = -static_cast<std::ptrdiff_t>(kContextLeft);
         k <= static_cast<std::ptrdiff_t>(kContextRight); ++k) {
        const auto idx = std::clamp(static_cast<std::ptrdiff_t>(center) + k, std::ptrdiff_t{0}, last);
        const Frame& f = frames[static_cast<std::size_t>(idx)];
        w.merged.insert(w.merged.end(), f.begin(), f.end());
    }
    return w;
}

std::vector<float> edge_padded_signal(std::span<const Frame> frames) {
    if (frames.empty()) {
        throw Error(ErrorKind::EmptyInput, "no frames");
    }
    std::vector<float> out;
    out.reserve((frames.size() + kContextLeft + kContextRight) * kFrameSamples);
    for (std::size_t i = 0; i < kContextLeft; ++i) {
        out.insert(out.end(), frames.front().begin(), frames.front().end());
    }
    for (const auto& f : frames) {
        out.insert(out.end(), f.begin(), f.end());
    }
    for (std::size_t i = 0; i < kContextRight; ++i) {
        out.insert(out.end(), frames.back().begin(), frames.back().end());
    }
    return out;
}

namespace {

std::uint32_t read_u32(std::span<const std::uint8_t> b, std::size_t at) {
    return static_cast<std::uint32_t>(b[at]) | (static_cast<std::uint32_t>(b[at + 1]) << 8) |
           (static_cast<std::uint32_t>(b[at + 2]) << 16) | (static_cast<std::uint32_t>(b[at + 3]) << 24);
}

std::uint16_t read_u16(std::span<const std::uint8_t> b, std::size_t at) {
    return static_cast<std::uint16_t>(b[at] | (b[at + 1] << 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
}

bool tag_is(std::span<const std::uint8_t> b, std::size_t at, const char* tag) {
    return std::memcmp(b.data() + at, tag, 4) == 0;
}

} // namespace

AudioBuffer decode_wav(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 12 || !tag_is(bytes, 0, "RIFF")) {
        throw Error(ErrorKind::UnsupportedFormat, "RIFF header missing");
    }
    if (!tag_is(bytes, 8, "WAVE")) {
        throw Error(ErrorKind::UnsupportedFormat, "RIFF form type is not WAVE");
    }
    bool have_fmt = false;
    AudioBuffer audio;
    std::size_t pos = 12;
    while (pos + 8 <= bytes.size()) {
        const std::uint32_t size = read_u32(bytes, pos + 4);
        const std::size_t body = pos + 8;
        if (body + size > bytes.size()) {
            throw Error(ErrorKind::UnsupportedFormat, "chunk size exceeds file length");
        }
        if (tag_is(bytes, pos, "fmt ")) {
            if (size < 16) throw Error(ErrorKind::UnsupportedFormat, "fmt chunk too small");
            const auto format = read_u16(bytes, body);
            const auto channels = read_u16(bytes, body + 2);
            const auto rate = read_u32(bytes, body + 4);
            const auto bits = read_u16(bytes, body + 14);
            if (format != 1) {
                throw Error(ErrorKind::UnsupportedFormat,
                            "audio_format " + std::to_string(format) + ", expected 1 (PCM)");
            }
            if (channels != 1) {
                throw Error(ErrorKind::UnsupportedFormat,
                            "num_channels " + std::to_string(channels) + ", expected 1");
            }
            if (rate != static_cast<std::uint32_t>(kSampleRate)) {
                throw Error(ErrorKind::UnsupportedFormat,
                            "sample_rate " + std::to_string(rate) + ", expected 16000");
            }
            if (bits != 16) {
                throw Error(ErrorKind::UnsupportedFormat,
                            "bits_per_sample " + std::to_string(bits) + ", expected 16");
            }
            have_fmt = true;
        } else if (tag_is(bytes, pos, "data")) {
            if (!have_fmt) throw Error(ErrorKind::UnsupportedFormat, "data chunk before fmt chunk");
            if (size % 2 != 0) throw Error(ErrorKind::UnsupportedFormat, "data size not a multiple of 2");
            audio.samples.resize(size / 2);
            for (std::size_t i = 0; i < audio.samples.size(); ++i) {
                audio.samples[i] = pcm16_to_float(static_cast<std::int16_t>(read_u16(bytes, body + 2 * i)));
            }
            return audio;
        }
        pos = body + size + (size & 1u);
    }
    throw Error(ErrorKind::UnsupportedFormat, have_fmt ? "data chunk missing" : "fmt chunk missing");
}

std::vector<std::uint8_t> encode_wav(const AudioBuffer& audio) {
    if (audio.sample_rate != kSampleRate) {
        throw Error(ErrorKind::UnsupportedFormat, "sample_rate must be 16000");
    }
    const auto data_bytes = static_cast<std::uint32_t>(audio.samples.size() * 2);
    std::vector<std::uint8_t> out;
    out.reserve(44 + data_bytes);
    out.insert(out.end(), {'R', 'I', 'F', 'F'});
    put_u32(out, 36 + data_bytes);
    out.insert(out.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
    put_u32(out, 16);
    put_u16(out, 1);
    put_u16(out, 1);
    put_u32(out, kSampleRate);
    put_u32(out, kSampleRate * 2);
    put_u16(out, 2);
    put_u16(out, 16);
    out.insert(out.end(), {'d', 'a', 't', 'a'});
    put_u32(out, data_bytes);
    for (float s : audio.samples) {
        put_u16(out, static_cast<std::uint16_t>(float_to_pcm16(s)));
    }
    return out;
}

AudioBuffer read_wav(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    try {
        return decode_wav(bytes);
    } catch (const Error& e) {
        throw Error(e.kind(), path.string() + ": " + e.detail());
    }
}

void write_wav(const std::filesystem::path& path, const AudioBuffer& audio) {
    const auto bytes = encode_wav(audio);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

} // namespace stuttergate
