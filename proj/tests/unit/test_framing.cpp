#include "doctest.h"
#include "support.h"

#include "stuttergate/framing.h"
#include "stuttergate/random.h"

#include <cstring>

using namespace stuttergate;
using test_support::error_kind;

namespace {

AudioBuffer ramp(std::size_t n) {
    AudioBuffer a;
    a.samples.resize(n);
    for (std::size_t i = 0; i < n; ++i) a.samples[i] = pcm16_to_float(static_cast<std::int16_t>((i * 37) % 60000 - 30000));
    return a;
}

std::vector<Frame> numbered_frames(std::size_t n) {
    std::vector<Frame> frames(n, Frame(kFrameSamples));
    for (std::size_t f = 0; f < n; ++f)
        for (std::size_t s = 0; s < kFrameSamples; ++s) frames[f][s] = static_cast<float>(f) + s * 1e-4f;
    return frames;
}

// Explicitly padded reference: clamp each neighbour index into range.
std::vector<float> reference_window(const std::vector<Frame>& frames, std::size_t center) {
    std::vector<float> out;
    for (int k = -4; k <= 4; ++k) {
        long j = static_cast<long>(center) + k;
        if (j < 0) j = 0;
        if (j >= static_cast<long>(frames.size())) j = static_cast<long>(frames.size()) - 1;
        out.insert(out.end(), frames[j].begin(), frames[j].end());
    }
    return out;
}

void put_u16(std::vector<std::uint8_t>& b, std::size_t at, std::uint16_t v) {
    b[at] = v & 0xff;
    b[at + 1] = v >> 8;
}

void put_u32(std::vector<std::uint8_t>& b, std::size_t at, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) b[at + i] = (v >> (8 * i)) & 0xff;
}

} // namespace

TEST_CASE("frame counts and padding") {
    auto one_second = split_frames(ramp(16000));
    CHECK(one_second.indexing.n_frames == 10);
    CHECK(one_second.indexing.last_frame_pad == 0);

    auto ragged = split_frames(ramp(16001));
    CHECK(ragged.indexing.n_frames == 11);
    CHECK(ragged.indexing.last_frame_pad == 1599);
    CHECK(ragged.frames.back()[0] == ramp(16001).samples.back());
    for (std::size_t s = 1; s < kFrameSamples; ++s) CHECK(ragged.frames.back()[s] == 0.0f);

    auto nine = split_frames(ramp(14400));
    REQUIRE(nine.frames.size() == 9);
    for (const auto& f : nine.frames) CHECK(f.size() == 1600);
    std::vector<float> joined;
    for (const auto& f : nine.frames) joined.insert(joined.end(), f.begin(), f.end());
    CHECK(joined == ramp(14400).samples);
}

TEST_CASE("split then join reproduces the input for random lengths") {
    Rng rng(3);
    for (int trial = 0; trial < 60; ++trial) {
        const auto n = static_cast<std::size_t>(rng.uniform_int(1, 100000));
        AudioBuffer a;
        a.samples.resize(n);
        for (auto& s : a.samples) s = pcm16_to_float(static_cast<std::int16_t>(rng.uniform_int(-32768, 32767)));
        const auto split = split_frames(a);
        CHECK(split.indexing.n_frames == frame_count(n));
        CHECK(split.indexing.n_frames * 1600 - split.indexing.last_frame_pad == n);
        CHECK(join_frames(split) == a.samples);
    }
}

TEST_CASE("audio validation") {
    AudioBuffer empty;
    CHECK(error_kind([&] { split_frames(empty); }) == ErrorKind::EmptyInput);
    AudioBuffer wrong_rate = ramp(100);
    wrong_rate.sample_rate = 8000;
    CHECK(error_kind([&] { split_frames(wrong_rate); }) == ErrorKind::UnsupportedFormat);
}

TEST_CASE("context windows") {
    const auto frames = numbered_frames(10);

    auto mid = context_window(frames, 5);
    REQUIRE(mid.merged.size() == kContextSamples);
    for (std::size_t k = 0; k < 9; ++k) CHECK(mid.merged[k * 1600] == static_cast<float>(k + 1));

    auto first = context_window(frames, 0);
    CHECK(first.merged == reference_window(frames, 0));
    const float expect[] = {0, 0, 0, 0, 0, 1, 2, 3, 4};
    for (std::size_t k = 0; k < 9; ++k) CHECK(first.merged[k * 1600] == expect[k]);

    auto last = context_window(frames, 9);
    CHECK(last.merged == reference_window(frames, 9));

    const auto single = numbered_frames(1);
    auto lone = context_window(single, 0);
    for (std::size_t k = 0; k < 9; ++k)
        CHECK(std::equal(single[0].begin(), single[0].end(), lone.merged.begin() + k * 1600));

    CHECK(error_kind([&] { context_window(frames, 10); }) == ErrorKind::OutOfRange);
}

TEST_CASE("centre slot of every window is the frame itself") {
    Rng rng(11);
    for (std::size_t n : {1u, 2u, 5u, 13u}) {
        std::vector<Frame> frames(n, Frame(kFrameSamples));
        for (auto& f : frames)
            for (auto& s : f) s = static_cast<float>(rng.uniform(-1, 1));
        const auto padded = edge_padded_signal(frames);
        for (std::size_t i = 0; i < n; ++i) {
            const auto w = context_window(frames, i);
            CHECK(std::equal(frames[i].begin(), frames[i].end(), w.merged.begin() + 4 * 1600));
            CHECK(w.merged == reference_window(frames, i));
            CHECK(std::equal(w.merged.begin(), w.merged.end(), padded.begin() + i * 1600));
        }
    }
}

TEST_CASE("pcm conversion") {
    CHECK(pcm16_to_float(-32768) == -1.0f);
    CHECK(pcm16_to_float(16384) == 0.5f);
    for (int v = -32768; v <= 32767; v += 7) CHECK(float_to_pcm16(pcm16_to_float(static_cast<std::int16_t>(v))) == v);
    CHECK(float_to_pcm16(2.0f) == 32767);
    CHECK(float_to_pcm16(-2.0f) == -32768);
}

TEST_CASE("wav round trip and header errors") {
    const auto a = ramp(1234);
    const auto bytes = encode_wav(a);
    REQUIRE(bytes.size() == 44 + 2 * 1234);
    CHECK(decode_wav(bytes).samples == a.samples);

    auto expect_field = [&](std::size_t at, int width, std::uint32_t value, const char* field) {
        auto bad = bytes;
        if (width == 2) put_u16(bad, at, static_cast<std::uint16_t>(value));
        else put_u32(bad, at, value);
        CHECK(error_kind([&] { decode_wav(bad); }) == ErrorKind::UnsupportedFormat);
        CHECK(test_support::error_text([&] { decode_wav(bad); }).find(field) != std::string::npos);
    };
    expect_field(20, 2, 3, "audio_format");
    expect_field(22, 2, 2, "num_channels");
    expect_field(24, 4, 44100, "sample_rate");
    expect_field(34, 2, 24, "bits_per_sample");

    auto not_riff = bytes;
    std::memcpy(not_riff.data(), "RIFX", 4);
    CHECK(error_kind([&] { decode_wav(not_riff); }) == ErrorKind::UnsupportedFormat);

    test_support::TempDir dir("wav");
    write_wav(dir.path() / "a.wav", a);
    CHECK(read_wav(dir.path() / "a.wav").samples == a.samples);
    CHECK(error_kind([&] { read_wav(dir.path() / "missing.wav"); }) == ErrorKind::Io);
}
