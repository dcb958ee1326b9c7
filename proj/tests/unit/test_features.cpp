#include "doctest.h"
#include "oracles.h"
#include "support.h"

#include "stuttergate/features.h"
#include "stuttergate/random.h"

#include <cmath>
#include <complex>
#include <numbers>

using namespace stuttergate;
using test_support::error_kind;
using namespace oracles;

namespace {

constexpr double kPi = std::numbers::pi;

double htk_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double htk_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

} // namespace

TEST_CASE("stft row count") {
    CHECK(stft_frame_count(14400) == 71);
    CHECK(stft_frame_count(400) == 1);
    CHECK(stft_frame_count(599) == 1);
    CHECK(stft_frame_count(600) == 2);
    const auto x = random_signal(14400, 1);
    CHECK(stft_power(x).rows == 71);
    CHECK(stft_power(x).cols == 257);
    CHECK(error_kind([&] { stft_power(std::span<const float>(x.data(), 399)); }) == ErrorKind::TooShort);
}

TEST_CASE("stft matches a direct dft") {
    const auto x = random_signal(1400, 2);
    const auto p = stft_power(x);
    for (std::size_t r = 0; r < p.rows; ++r) {
        const auto ref = direct_power_row(x, r * 200);
        for (std::size_t k = 0; k < ref.size(); ++k) CHECK(p.at(r, k) == doctest::Approx(ref[k]).epsilon(1e-9));
    }
}

TEST_CASE("1 kHz sine peaks at bin 32") {
    std::vector<float> x(14400);
    for (std::size_t n = 0; n < x.size(); ++n) x[n] = static_cast<float>(0.5 * std::sin(2 * kPi * 1000.0 * n / 16000.0));
    const auto p = stft_power(x);
    const std::size_t closed_form = static_cast<std::size_t>(std::lround(1000.0 * 512 / 16000.0));
    REQUIRE(closed_form == 32);
    const auto brute = direct_power_row(x, 0);
    CHECK(std::max_element(brute.begin(), brute.end()) - brute.begin() == 32);
    for (std::size_t r = 0; r < p.rows; ++r) {
        const auto row = p.row(r);
        CHECK(std::max_element(row.begin(), row.end()) - row.begin() == 32);
    }
}

TEST_CASE("parseval per row") {
    const auto x = random_signal(6000, 3);
    const auto p = stft_power(x);
    const std::size_t N = 512;
    for (std::size_t r = 0; r < p.rows; ++r) {
        double time_energy = 0.0;
        for (std::size_t n = 0; n < 400; ++n) {
            const double w = 0.54 - 0.46 * std::cos(2 * kPi * n / 399.0);
            const double v = x[r * 200 + n] * w;
            time_energy += v * v;
        }
        double freq_energy = p.at(r, 0) + p.at(r, N / 2);
        for (std::size_t k = 1; k < N / 2; ++k) freq_energy += 2.0 * p.at(r, k);
        freq_energy /= static_cast<double>(N);
        CHECK(std::abs(freq_energy - time_energy) / time_energy <= 1e-6);
    }
}

TEST_CASE("zero input and hop shift") {
    const std::vector<float> zeros(2000, 0.0f);
    for (double v : stft_power(zeros).data) CHECK(v == 0.0);

    const auto x = random_signal(4000, 4);
    const auto a = stft_power(x);
    const auto b = stft_power(std::span<const float>(x).subspan(200));
    REQUIRE(b.rows + 1 == a.rows);
    for (std::size_t r = 0; r < b.rows; ++r)
        for (std::size_t k = 0; k < b.cols; ++k) CHECK(std::abs(b.at(r, k) - a.at(r + 1, k)) <= 1e-9);
}

TEST_CASE("mel filterbank structure") {
    const auto fb = mel_filterbank();
    REQUIRE(fb.rows == 64);
    REQUIRE(fb.cols == 257);
    for (std::size_t k = 0; k < fb.cols; ++k) {
        const double f = k * 16000.0 / 512.0;
        double total = 0.0;
        for (std::size_t m = 0; m < fb.rows; ++m) total += fb.at(m, k);
        if (f > 20.0 && f < 8000.0) CHECK(total > 0.0);
        for (std::size_t m = 0; m < fb.rows; ++m) CHECK(fb.at(m, k) <= 1.0);
    }
    // Triangle edges from the HTK mel scale, computed independently.
    std::vector<double> edges(66);
    for (std::size_t i = 0; i < edges.size(); ++i)
        edges[i] = htk_hz(htk_mel(20.0) + (htk_mel(8000.0) - htk_mel(20.0)) * i / 65.0);
    for (std::size_t m = 0; m < 64; ++m)
        for (std::size_t k = 0; k < fb.cols; ++k) {
            const double f = k * 16000.0 / 512.0;
            const bool inside = f > edges[m] && f < edges[m + 2];
            CHECK((fb.at(m, k) > 0.0) == inside);
        }

    MelConfig bad;
    bad.f_max = 9000.0;
    CHECK(error_kind([&] { bad.validate(); }) == ErrorKind::Config);
}

TEST_CASE("mel projection laws") {
    const double floor_log = std::log(1e-10);
    FeatureMatrix zero(3, 257);
    for (double v : mel_project(zero).data) CHECK(v == floor_log);

    const auto fb = mel_filterbank();
    for (std::size_t k = 1; k < 256; ++k) {
        FeatureMatrix spike(1, 257);
        spike.at(0, k) = 1.0;
        const auto out = mel_project(spike);
        std::size_t lit = 0, covering = 0;
        for (std::size_t m = 0; m < 64; ++m) {
            lit += out.at(0, m) > floor_log;
            covering += fb.at(m, k) > 0.0;
        }
        CHECK(lit == covering);
        CHECK(lit >= 1);
        CHECK(lit <= 2);
    }

    FeatureMatrix power(2, 257);
    Rng rng(5);
    for (double& v : power.data) v = rng.uniform();
    const auto e = mel_energies(power);
    FeatureMatrix scaled = power;
    for (double& v : scaled.data) v *= 3.5;
    const auto es = mel_energies(scaled);
    for (std::size_t i = 0; i < e.data.size(); ++i) CHECK(es.data[i] == doctest::Approx(3.5 * e.data[i]).epsilon(1e-12));

    const auto base = mel_project(power);
    for (int trial = 0; trial < 50; ++trial) {
        FeatureMatrix raised = power;
        raised.data[static_cast<std::size_t>(rng.uniform_int(0, raised.data.size() - 1))] += rng.uniform(0.0, 2.0);
        const auto out = mel_project(raised);
        for (std::size_t i = 0; i < out.data.size(); ++i) CHECK(out.data[i] >= base.data[i]);
    }

    FeatureMatrix one_bin(1, 1);
    CHECK(error_kind([&] { mel_project(one_bin); }) == ErrorKind::Shape);
}

TEST_CASE("classifier features") {
    AudioBuffer a;
    a.samples = random_signal(16000, 6);
    const auto f = classifier_features(a, 3);
    CHECK(f.rows == 71);
    CHECK(f.cols == 64);
    CHECK(classifier_features(a, 3).data == f.data);

    const auto bank = classifier_feature_bank(a);
    REQUIRE(bank.n_frames == 10);
    CHECK(bank.logmel.rows == 8 * 10 + 63);
    for (std::size_t i = 0; i < bank.n_frames; ++i) CHECK(bank.window(i).data == classifier_features(a, i).data);
    CHECK(bank_from_logmel(bank.logmel).n_frames == 10);
    FeatureMatrix odd(100, 64);
    CHECK(error_kind([&] { bank_from_logmel(odd); }) == ErrorKind::Shape);

    AudioBuffer silence;
    silence.samples.assign(8000, 0.0f);
    for (double v : classifier_features(silence, 0).data) CHECK(v == std::log(1e-10));
}

TEST_CASE("decoder features average each frame's own rows") {
    AudioBuffer a;
    a.samples = random_signal(4500, 7);
    const auto dec = decoder_features(a);
    REQUIRE(dec.rows == 3);
    std::vector<float> padded = a.samples;
    padded.resize(4800, 0.0f);
    for (std::size_t f = 0; f < 3; ++f) {
        const auto lm = mel_project(stft_power(std::span<const float>(padded).subspan(f * 1600, 1600)));
        REQUIRE(lm.rows == 7);
        for (std::size_t m = 0; m < 64; ++m) {
            double mean = 0.0;
            for (std::size_t r = 0; r < lm.rows; ++r) mean += lm.at(r, m);
            CHECK(dec.at(f, m) == doctest::Approx(mean / 7.0).epsilon(1e-12));
        }
    }
}

TEST_CASE("sgft round trip") {
    FeatureMatrix m(5, 3);
    Rng rng(8);
    for (double& v : m.data) v = static_cast<float>(rng.uniform(-10, 10));
    const auto bytes = encode_feature_file(m);
    CHECK(bytes.size() == 4 + 2 + 4 + 4 + 15 * 4);
    CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "SGFT");
    const auto back = decode_feature_file(bytes);
    CHECK(back.rows == 5);
    CHECK(back.cols == 3);
    CHECK(back.data == m.data);

    auto truncated = bytes;
    truncated.pop_back();
    CHECK(error_kind([&] { decode_feature_file(truncated); }).has_value());
    auto bad_magic = bytes;
    bad_magic[0] = 'X';
    CHECK(error_kind([&] { decode_feature_file(bad_magic); }) == ErrorKind::UnsupportedFormat);

    test_support::TempDir dir("sgft");
    write_feature_file(dir.path() / "m.sgft", m);
    CHECK(read_feature_file(dir.path() / "m.sgft").data == m.data);
}
