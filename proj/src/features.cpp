#include "stuttergate/features.h"

#include "stuttergate/detail/binary_io.h"
#include "stuttergate/error.h"

#include <fftw3.h>

#include <cmath>
#include <complex>
#include <map>
#include <mutex>
#include <numbers>

namespace stuttergate {

void StftConfig::validate() const {
    if (win_len == 0 || win_len > fft_size) {
        throw Error(ErrorKind::Config, "stft win_len must be in [1, fft_size]");
    }
    if (hop == 0) throw Error(ErrorKind::Config, "stft hop must be positive");
}

void MelConfig::validate(int sample_rate) const {
    if (n_mels < 1) throw Error(ErrorKind::Config, "n_mels must be >= 1");
    if (!(f_min >= 0.0 && f_min < f_max && f_max <= sample_rate / 2.0)) {
        throw Error(ErrorKind::Config, "mel range must satisfy 0 <= f_min < f_max <= sample_rate/2");
    }
    if (!(log_floor > 0.0)) throw Error(ErrorKind::Config, "log_floor must be positive");
}

std::size_t stft_frame_count(std::size_t n_samples, const StftConfig& cfg) {
    if (n_samples < cfg.win_len) return 0;
    return (n_samples - cfg.win_len) / cfg.hop + 1;
}

std::vector<double> hamming_window(std::size_t n) {
    std::vector<double> w(n, 1.0);
    if (n < 2) return w;
    for (std::size_t i = 0; i < n; ++i) {
        w[i] = 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n - 1));
    }
    return w;
}

namespace {

// Plans are created once per size; fftw_execute_dft_r2c on a shared plan is
// thread-safe. ESTIMATE keeps plan selection (and thus results) deterministic.
fftw_plan r2c_plan(std::size_t n) {
    static std::mutex mu;
    static std::map<std::size_t, fftw_plan> plans;
    std::lock_guard lock(mu);
    auto it = plans.find(n);
    if (it != plans.end()) return it->second;
    std::vector<double> in(n);
    std::vector<std::complex<double>> out(n / 2 + 1);
    fftw_plan p = fftw_plan_dft_r2c_1d(static_cast<int>(n), in.data(), reinterpret_cast<fftw_complex*>(out.data()),
                                       FFTW_ESTIMATE | FFTW_UNALIGNED);
    if (!p) throw Error(ErrorKind::NumericFailure, "fftw plan creation failed");
    plans.emplace(n, p);
    return p;
}

const std::vector<double>& cached_hamming(std::size_t n) {
    static std::mutex mu;
    static std::map<std::size_t, std::vector<double>> cache;
    std::lock_guard lock(mu);
    auto it = cache.find(n);
    if (it == cache.end()) it = cache.emplace(n, hamming_window(n)).first;
    return it->second;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

} // namespace

FeatureMatrix stft_power(std::span<const float> samples, const StftConfig& cfg) {
    cfg.validate();
    if (samples.size() < cfg.win_len) {
        throw Error(ErrorKind::TooShort, std::to_string(samples.size()) + " samples, need at least " +
                                             std::to_string(cfg.win_len));
    }
    const std::size_t n_rows = stft_frame_count(samples.size(), cfg);
    const std::size_t n_bins = cfg.n_bins();
    FeatureMatrix power(n_rows, n_bins);
    const auto& window = cached_hamming(cfg.win_len);
    fftw_plan plan = r2c_plan(cfg.fft_size);
    std::vector<double> buf(cfg.fft_size, 0.0);
    std::vector<std::complex<double>> spectrum(n_bins);
    for (std::size_t r = 0; r < n_rows; ++r) {
        const std::size_t start = r * cfg.hop;
        for (std::size_t i = 0; i < cfg.win_len; ++i) {
            buf[i] = static_cast<double>(samples[start + i]) * window[i];
        }
        fftw_execute_dft_r2c(plan, buf.data(), reinterpret_cast<fftw_complex*>(spectrum.data()));
        auto row = power.row(r);
        for (std::size_t k = 0; k < n_bins; ++k) {
            row[k] = std::norm(spectrum[k]);
        }
    }
    return power;
}

FeatureMatrix mel_filterbank(const MelConfig& cfg, const StftConfig& stft, int sample_rate) {
    cfg.validate(sample_rate);
    const std::size_t n_bins = stft.n_bins();
    FeatureMatrix fb(cfg.n_mels, n_bins);
    const double mel_lo = hz_to_mel(cfg.f_min);
    const double mel_hi = hz_to_mel(cfg.f_max);
    std::vector<double> edges(cfg.n_mels + 2);
    for (std::size_t i = 0; i < edges.size(); ++i) {
        edges[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * static_cast<double>(i) / static_cast<double>(cfg.n_mels + 1));
    }
    for (std::size_t m = 0; m < cfg.n_mels; ++m) {
        const double left = edges[m];
        const double center = edges[m + 1];
        const double right = edges[m + 2];
        for (std::size_t k = 0; k < n_bins; ++k) {
            const double f = static_cast<double>(k) * sample_rate / static_cast<double>(stft.fft_size);
            double w = 0.0;
            if (f > left && f <= center) {
                w = (f - left) / (center - left);
            } else if (f > center && f < right) {
                w = (right - f) / (right - center);
            }
            fb.at(m, k) = w;
        }
    }
    return fb;
}

namespace {

const FeatureMatrix& cached_filterbank(const MelConfig& cfg, std::size_t n_bins) {
    static std::mutex mu;
    static std::map<std::tuple<std::size_t, double, double, std::size_t>, FeatureMatrix> cache;
    std::lock_guard lock(mu);
    const auto key = std::make_tuple(cfg.n_mels, cfg.f_min, cfg.f_max, n_bins);
    auto it = cache.find(key);
    if (it == cache.end()) {
        StftConfig stft;
        stft.fft_size = (n_bins - 1) * 2;
        stft.win_len = std::min(stft.win_len, stft.fft_size);
        it = cache.emplace(key, mel_filterbank(cfg, stft)).first;
    }
    return it->second;
}

} // namespace

FeatureMatrix mel_energies(const FeatureMatrix& power, const MelConfig& cfg) {
    if (power.cols < 2) throw Error(ErrorKind::Shape, "power spectrogram needs at least 2 bins");
    const FeatureMatrix& fb = cached_filterbank(cfg, power.cols);
    if (fb.cols != power.cols) {
        throw Error(ErrorKind::Shape, "filterbank has " + std::to_string(fb.cols) + " bins, power has " +
                                          std::to_string(power.cols));
    }
    FeatureMatrix out(power.rows, cfg.n_mels);
    for (std::size_t r = 0; r < power.rows; ++r) {
        const auto p = power.row(r);
        auto o = out.row(r);
        for (std::size_t m = 0; m < cfg.n_mels; ++m) {
            const auto w = fb.row(m);
            double acc = 0.0;
            for (std::size_t k = 0; k < p.size(); ++k) acc += w[k] * p[k];
            o[m] = acc;
        }
    }
    return out;
}

FeatureMatrix mel_project(const FeatureMatrix& power, const MelConfig& cfg) {
    FeatureMatrix out = mel_energies(power, cfg);
    for (double& v : out.data) {
        v = std::log(v + cfg.log_floor);
        if (!std::isfinite(v)) throw Error(ErrorKind::NumericFailure, "non-finite log-mel value");
    }
    return out;
}

FeatureMatrix classifier_features(const AudioBuffer& audio, std::size_t i, const MelConfig& mel) {
    const auto split = split_frames(audio);
    const auto window = context_window(split.frames, i);
    FeatureMatrix out = mel_project(stft_power(window.merged), mel);
    out.center_frame = i;
    return out;
}

FeatureMatrix ClassifierFeatureBank::window(std::size_t i) const {
    if (i >= n_frames) throw Error(ErrorKind::OutOfRange, "frame index " + std::to_string(i));
    FeatureMatrix out(kClassifierRows, logmel.cols);
    const auto src = window_data(i);
    std::copy(src.begin(), src.end(), out.data.begin());
    out.utterance_id = logmel.utterance_id;
    out.center_frame = i;
    return out;
}

std::span<const double> ClassifierFeatureBank::window_data(std::size_t i) const {
    return {logmel.data.data() + i * kRowsPerFrame * logmel.cols, kClassifierRows * logmel.cols};
}

ClassifierFeatureBank classifier_feature_bank(const AudioBuffer& audio, const MelConfig& mel,
                                              const std::string& utterance_id) {
    const auto split = split_frames(audio);
    const auto padded = edge_padded_signal(split.frames);
    ClassifierFeatureBank bank;
    bank.n_frames = split.frames.size();
    bank.logmel = mel_project(stft_power(padded), mel);
    bank.logmel.utterance_id = utterance_id;
    return bank;
}

ClassifierFeatureBank bank_from_logmel(FeatureMatrix logmel) {
    constexpr std::size_t extra = kClassifierRows - kRowsPerFrame;
    if (logmel.rows < kClassifierRows || (logmel.rows - extra) % kRowsPerFrame != 0) {
        throw Error(ErrorKind::Shape, "log-mel bank with " + std::to_string(logmel.rows) +
                                          " rows is not 8 * n_frames + 63");
    }
    ClassifierFeatureBank bank;
    bank.n_frames = (logmel.rows - extra) / kRowsPerFrame;
    bank.logmel = std::move(logmel);
    return bank;
}

FeatureMatrix decoder_features(const AudioBuffer& audio, const MelConfig& mel, const std::string& utterance_id) {
    const auto split = split_frames(audio);
    FeatureMatrix out(split.frames.size(), mel.n_mels);
    out.utterance_id = utterance_id;
    for (std::size_t f = 0; f < split.frames.size(); ++f) {
        const auto logmel = mel_project(stft_power(split.frames[f]), mel);
        auto o = out.row(f);
        for (std::size_t r = 0; r < logmel.rows; ++r) {
            const auto row = logmel.row(r);
            for (std::size_t m = 0; m < mel.n_mels; ++m) o[m] += row[m];
        }
        for (double& v : o) v /= static_cast<double>(logmel.rows);
    }
    return out;
}

std::vector<std::uint8_t> encode_feature_file(const FeatureMatrix& m) {
    detail::ByteWriter w;
    w.raw("SGFT");
    w.u16(kFeatureFileVersion);
    w.u32(static_cast<std::uint32_t>(m.rows));
    w.u32(static_cast<std::uint32_t>(m.cols));
    for (double v : m.data) w.f32(static_cast<float>(v));
    return w.take();
}

FeatureMatrix decode_feature_file(std::span<const std::uint8_t> bytes) {
    detail::ByteReader r(bytes);
    r.expect_magic("SGFT");
    const auto version = r.u16();
    if (version != kFeatureFileVersion) {
        throw Error(ErrorKind::UnsupportedFormat, "SGFT version " + std::to_string(version));
    }
    const auto rows = r.u32();
    const auto cols = r.u32();
    FeatureMatrix m(rows, cols);
    for (double& v : m.data) v = r.f32();
    if (!r.done()) throw Error(ErrorKind::UnsupportedFormat, "trailing bytes after SGFT payload");
    return m;
}

void write_feature_file(const std::filesystem::path& path, const FeatureMatrix& m) {
    detail::write_file_bytes(path, encode_feature_file(m));
}

FeatureMatrix read_feature_file(const std::filesystem::path& path) {
    return decode_feature_file(detail::read_file_bytes(path));
}

} // namespace stuttergate
