#include "stuttergate/corpus.h"

#include "stuttergate/error.h"
#include "stuttergate/parallel.h"
#include "stuttergate/random.h"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

namespace stuttergate {

namespace {

struct TagEntry {
    StutterType type;
    std::string_view tag;
    std::string_view name;
};

constexpr std::array<TagEntry, 8> kTagTable = {{
    {StutterType::Revision, "R", "revision"},
    {StutterType::Interjection, "I", "interjection"},
    {StutterType::DysrhythmicPhonation, "D", "dysrhythmic_phonation"},
    {StutterType::Block, "B", "block"},
    {StutterType::PhonemeRepetition, "P", "phoneme_repetition"},
    {StutterType::PartWordRepetition, "PW", "part_word_repetition"},
    {StutterType::WordRepetition, "W", "word_repetition"},
    {StutterType::PhraseRepetition, "PH", "phrase_repetition"},
}};

const TagEntry& entry(StutterType type) {
    for (const auto& e : kTagTable) {
        if (e.type == type) return e;
    }
    throw Error(ErrorKind::Domain, "unknown stutter type");
}

} // namespace

std::string_view stutter_tag(StutterType type) { return entry(type).tag; }
std::string_view stutter_name(StutterType type) { return entry(type).name; }

std::optional<StutterType> stutter_type_from_tag(std::string_view tag) {
    for (const auto& e : kTagTable) {
        if (e.tag == tag) return e.type;
    }
    return std::nullopt;
}

namespace {

bool parse_int(std::string_view s, std::int64_t& out) {
    if (s.empty() || s.size() > 15) return false;
    std::int64_t v = 0;
    for (char c : s) {
        if (c < '0' || c > '9') return false;
        v = v * 10 + (c - '0');
    }
    out = v;
    return true;
}

} // namespace

std::vector<StutterEvent> parse_annotations(std::string_view text) {
    std::vector<StutterEvent> events;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const std::size_t eol = std::min(text.find('\n', pos), text.size());
        std::string_view line = text.substr(pos, eol - pos);
        pos = eol + 1;
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);

        const auto fail = [&](const std::string& why) {
            return Error(ErrorKind::Parse, "line " + std::to_string(line_no) + ": " + why);
        };

        std::vector<std::string_view> fields;
        std::size_t i = 0;
        while (i < line.size()) {
            const char c = line[i];
            if (std::isspace(static_cast<unsigned char>(c))) {
                ++i;
                continue;
            }
            if (c != '[') throw fail("unexpected character '" + std::string(1, c) + "'");
            const std::size_t close = line.find(']', i + 1);
            if (close == std::string_view::npos) throw fail("unterminated bracket");
            fields.push_back(line.substr(i + 1, close - i - 1));
            i = close + 1;
        }
        if (fields.empty()) continue;
        if (fields.size() % 3 != 0) throw fail("expected [onset] [TAG] [offset]");

        for (std::size_t f = 0; f < fields.size(); f += 3) {
            StutterEvent ev;
            if (!parse_int(fields[f], ev.onset_ms)) throw fail("bad onset '" + std::string(fields[f]) + "'");
            if (!parse_int(fields[f + 2], ev.offset_ms)) {
                throw fail("bad offset '" + std::string(fields[f + 2]) + "'");
            }
            const auto type = stutter_type_from_tag(fields[f + 1]);
            if (!type) {
                throw Error(ErrorKind::UnknownTag,
                            "line " + std::to_string(line_no) + ": tag '" + std::string(fields[f + 1]) + "'");
            }
            ev.kind = *type;
            if (ev.offset_ms <= ev.onset_ms) {
                throw Error(ErrorKind::Range, "line " + std::to_string(line_no) + ": offset " +
                                                  std::to_string(ev.offset_ms) + " <= onset " +
                                                  std::to_string(ev.onset_ms));
            }
            events.push_back(ev);
        }
    }
    std::stable_sort(events.begin(), events.end(), [](const StutterEvent& a, const StutterEvent& b) {
        return a.onset_ms < b.onset_ms;
    });
    return events;
}

std::string serialize_annotations(const std::vector<StutterEvent>& events) {
    std::string out;
    for (const auto& ev : events) {
        out += "[" + std::to_string(ev.onset_ms) + "] [" + std::string(stutter_tag(ev.kind)) + "] [" +
               std::to_string(ev.offset_ms) + "]\n";
    }
    return out;
}

LabelResult label_frames(const std::vector<StutterEvent>& events, std::size_t n_frames) {
    LabelResult result;
    result.track.labels.assign(n_frames, 0);
    const auto end_ms = static_cast<std::int64_t>(n_frames) * kFrameMs;

    std::vector<std::pair<std::int64_t, std::int64_t>> spans;
    for (const auto& ev : events) {
        auto lo = std::max<std::int64_t>(ev.onset_ms, 0);
        auto hi = ev.offset_ms;
        if (hi > end_ms) {
            result.warnings.push_back("event [" + std::to_string(ev.onset_ms) + ", " + std::to_string(ev.offset_ms) +
                                      "] clipped to utterance end " + std::to_string(end_ms) + " ms");
            hi = end_ms;
        }
        if (lo < hi) spans.emplace_back(lo, hi);
    }
    std::sort(spans.begin(), spans.end());
    std::vector<std::pair<std::int64_t, std::int64_t>> merged;
    for (const auto& s : spans) {
        if (!merged.empty() && s.first <= merged.back().second) {
            merged.back().second = std::max(merged.back().second, s.second);
        } else {
            merged.push_back(s);
        }
    }
    std::vector<std::int64_t> overlap(n_frames, 0);
    for (const auto& [lo, hi] : merged) {
        const auto first = static_cast<std::size_t>(lo / kFrameMs);
        const auto last = static_cast<std::size_t>((hi - 1) / kFrameMs);
        for (std::size_t f = first; f <= last && f < n_frames; ++f) {
            const auto f_lo = static_cast<std::int64_t>(f) * kFrameMs;
            overlap[f] += std::min(hi, f_lo + kFrameMs) - std::max(lo, f_lo);
        }
    }
    for (std::size_t f = 0; f < n_frames; ++f) {
        result.track.labels[f] = overlap[f] >= kLabelOverlapMs ? 1 : 0;
    }
    return result;
}

// ---------------------------------------------------------------------------

std::string_view severity_name(SeverityBand band) {
    switch (band) {
    case SeverityBand::Normal: return "normal";
    case SeverityBand::Mild: return "mild";
    case SeverityBand::Moderate: return "moderate";
    case SeverityBand::Severe: return "severe";
    case SeverityBand::VerySevere: return "very_severe";
    }
    return "normal";
}

std::optional<SeverityBand> severity_from_name(std::string_view name) {
    for (auto b : kAllSeverityBands) {
        if (severity_name(b) == name) return b;
    }
    return std::nullopt;
}

SeverityBand severity(double f) {
    if (!(f >= 0.0 && f <= 1.0)) {
        throw Error(ErrorKind::Domain, "stutter fraction " + std::to_string(f) + " outside [0, 1]");
    }
    if (f < 0.01) return SeverityBand::Normal;
    if (f < 0.06) return SeverityBand::Mild;
    if (f < 0.13) return SeverityBand::Moderate;
    if (f < 0.20) return SeverityBand::Severe;
    return SeverityBand::VerySevere;
}

std::pair<double, double> severity_bounds(SeverityBand band) {
    switch (band) {
    case SeverityBand::Normal: return {0.0, 0.01};
    case SeverityBand::Mild: return {0.01, 0.06};
    case SeverityBand::Moderate: return {0.06, 0.13};
    case SeverityBand::Severe: return {0.13, 0.20};
    case SeverityBand::VerySevere: return {0.20, 1.0};
    }
    return {0.0, 0.0};
}

// ---------------------------------------------------------------------------

const std::vector<std::string>& synth_vocabulary() {
    static const std::vector<std::string> vocab = {"zero", "one",  "two", "three", "four", "five",
                                                   "six",  "seven", "eight", "nine", "go",  "stop",
                                                   "left", "right", "up",  "down"};
    return vocab;
}

namespace {

std::vector<std::pair<std::size_t, std::size_t>> feasible_counts(const SynthConfig& cfg, SeverityBand band) {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (std::size_t n_tok = cfg.min_tokens; n_tok <= cfg.max_tokens; ++n_tok) {
        if (band == SeverityBand::Normal) {
            out.emplace_back(n_tok, 0);
            continue;
        }
        for (std::size_t n_ev = 1; n_ev <= n_tok; ++n_ev) {
            const double f = static_cast<double>(n_ev) / static_cast<double>(n_tok);
            if (f > cfg.max_stutter_fraction) break;
            if (severity(f) == band) out.emplace_back(n_tok, n_ev);
        }
    }
    return out;
}

double event_weight(const SynthConfig& cfg, StutterType t) {
    switch (t) {
    case StutterType::WordRepetition: return cfg.weight_word_repetition;
    case StutterType::PartWordRepetition: return cfg.weight_part_word_repetition;
    case StutterType::PhonemeRepetition: return cfg.weight_phoneme_repetition;
    case StutterType::DysrhythmicPhonation: return cfg.weight_prolongation;
    case StutterType::Block: return cfg.weight_block;
    default: return 0.0;
    }
}

constexpr std::array<StutterType, 5> kGeneratedTypes = {
    StutterType::WordRepetition, StutterType::PartWordRepetition, StutterType::PhonemeRepetition,
    StutterType::DysrhythmicPhonation, StutterType::Block};

} // namespace

void SynthConfig::validate() const {
    if (n_utts < 1) throw Error(ErrorKind::Config, "n_utts must be >= 1");
    if (min_tokens < 1 || min_tokens > max_tokens) {
        throw Error(ErrorKind::Config, "token range must satisfy 1 <= min_tokens <= max_tokens");
    }
    if (token_ms < 100 || token_ms % 100 != 0 || gap_ms < 100 || gap_ms % 100 != 0) {
        throw Error(ErrorKind::Config, "token_ms and gap_ms must be positive multiples of 100");
    }
    if (!(noise_std >= 0.0)) throw Error(ErrorKind::Config, "noise_std must be >= 0");
    if (!(repeat_probability >= 0.0 && repeat_probability < 1.0)) {
        throw Error(ErrorKind::Config, "repeat_probability must be in [0, 1)");
    }
    double total = 0.0;
    for (const auto& [band, w] : severity_mix) {
        if (!(w >= 0.0) || !std::isfinite(w)) {
            throw Error(ErrorKind::Config, "severity weight for " + std::string(severity_name(band)) +
                                               " must be finite and >= 0");
        }
        total += w;
    }
    if (std::abs(total - 1.0) > 1e-9) {
        throw Error(ErrorKind::Config, "severity mix sums to " + std::to_string(total) + ", expected 1");
    }
    double type_total = 0.0;
    for (auto t : kGeneratedTypes) {
        const double w = event_weight(*this, t);
        if (!(w >= 0.0)) throw Error(ErrorKind::Config, "event kind weights must be >= 0");
        type_total += w;
    }
    for (const auto& [band, w] : severity_mix) {
        if (w <= 0.0) continue;
        if (band == SeverityBand::Normal && force_events) {
            throw Error(ErrorKind::Config, "severity 'normal' cannot carry forced stutter events");
        }
        if (band != SeverityBand::Normal && type_total <= 0.0) {
            throw Error(ErrorKind::Config, "stuttered bands requested but every event kind weight is 0");
        }
        if (feasible_counts(*this, band).empty()) {
            throw Error(ErrorKind::Config, "severity '" + std::string(severity_name(band)) +
                                               "' unreachable with the configured token range");
        }
    }
}

std::vector<SeverityBand> assign_bands(const SynthConfig& cfg) {
    cfg.validate();
    std::vector<std::pair<SeverityBand, double>> quotas;
    std::size_t assigned = 0;
    std::vector<SeverityBand> bands;
    for (auto band : kAllSeverityBands) {
        const auto it = cfg.severity_mix.find(band);
        const double w = it == cfg.severity_mix.end() ? 0.0 : it->second;
        const double exact = w * static_cast<double>(cfg.n_utts);
        const auto base = static_cast<std::size_t>(std::floor(exact));
        bands.insert(bands.end(), base, band);
        assigned += base;
        if (w > 0.0) quotas.emplace_back(band, exact - static_cast<double>(base));
    }
    std::stable_sort(quotas.begin(), quotas.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    for (std::size_t i = 0; assigned < cfg.n_utts; ++i, ++assigned) {
        bands.push_back(quotas[i % quotas.size()].first);
    }
    Rng rng(cfg.seed, 0);
    rng.shuffle(bands.begin(), bands.end());
    return bands;
}

namespace {

struct ToneSpec {
    std::array<double, 3> freqs;
};

ToneSpec token_tone(std::size_t token) {
    const double v = static_cast<double>(token);
    return {{220.0 * std::pow(2.0, v / 8.0),
             1000.0 * std::pow(2.0, static_cast<double>((7 * token) % 16) / 8.0),
             4000.0 * std::pow(2.0, static_cast<double>((3 * token) % 16) / 16.0)}};
}

struct Segment {
    std::int64_t start_ms;
    std::int64_t dur_ms;
    std::size_t token;
};

} // namespace

SynthUtterance synth_utterance(const SynthConfig& cfg, std::size_t index, SeverityBand band) {
    Rng rng(cfg.seed, index + 1);
    const auto& vocab = synth_vocabulary();
    const auto pairs = feasible_counts(cfg, band);
    if (pairs.empty()) throw Error(ErrorKind::Config, "severity band unreachable");
    const auto [n_tok, n_ev] = pairs[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(pairs.size()) - 1))];

    SynthUtterance utt;
    char id_buf[32];
    std::snprintf(id_buf, sizeof id_buf, "_%05zu", index);
    utt.id = cfg.id_prefix + id_buf;
    utt.band = band;
    utt.n_tokens = n_tok;
    utt.stutter_fraction = static_cast<double>(n_ev) / static_cast<double>(n_tok);

    std::vector<std::size_t> tokens(n_tok);
    for (std::size_t j = 0; j < n_tok; ++j) {
        std::size_t t;
        if (j > 0 && rng.uniform() < cfg.repeat_probability) {
            t = tokens[j - 1];
        } else {
            do {
                t = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(vocab.size()) - 1));
            } while (j > 0 && t == tokens[j - 1]);
        }
        tokens[j] = t;
        utt.transcript.push_back(vocab[t]);
    }

    std::vector<std::size_t> positions(n_tok);
    for (std::size_t j = 0; j < n_tok; ++j) positions[j] = j;
    rng.shuffle(positions.begin(), positions.end());
    std::vector<std::optional<StutterType>> kind_at(n_tok);
    double type_total = 0.0;
    for (auto t : kGeneratedTypes) type_total += event_weight(cfg, t);
    for (std::size_t e = 0; e < n_ev; ++e) {
        double r = rng.uniform() * type_total;
        StutterType chosen = kGeneratedTypes.back();
        for (auto t : kGeneratedTypes) {
            const double w = event_weight(cfg, t);
            if (w > 0.0 && r < w) {
                chosen = t;
                break;
            }
            r -= w;
        }
        kind_at[positions[e]] = chosen;
    }

    const double pitch = rng.uniform(0.95, 1.05);
    const double amp = rng.uniform(0.25, 0.45);
    std::vector<Segment> segments;
    std::int64_t cursor = 100 * rng.uniform_int(1, 3);
    const std::int64_t token_ms = cfg.token_ms;
    const std::int64_t gap_ms = cfg.gap_ms;

    for (std::size_t j = 0; j < n_tok; ++j) {
        const std::size_t tok = tokens[j];
        if (!kind_at[j]) {
            segments.push_back({cursor, token_ms, tok});
            cursor += token_ms + gap_ms;
            continue;
        }
        const StutterType kind = *kind_at[j];
        switch (kind) {
        case StutterType::Block: {
            const std::int64_t dur = 100 * rng.uniform_int(2, 15);
            utt.events.push_back({cursor, cursor + dur, kind});
            cursor += dur;
            segments.push_back({cursor, token_ms, tok});
            cursor += token_ms + gap_ms;
            break;
        }
        case StutterType::DysrhythmicPhonation: {
            const std::int64_t stretch = rng.uniform_int(2, 5);
            segments.push_back({cursor, token_ms * stretch, tok});
            utt.events.push_back({cursor + token_ms, cursor + token_ms * stretch, kind});
            cursor += token_ms * stretch + gap_ms;
            break;
        }
        default: {
            const std::int64_t copies = rng.uniform_int(2, 4);
            std::int64_t frag = token_ms;
            if (kind == StutterType::PartWordRepetition) frag = std::max<std::int64_t>(100, token_ms - 100);
            if (kind == StutterType::PhonemeRepetition) frag = 100;
            const std::int64_t start = cursor;
            for (std::int64_t c = 0; c + 1 < copies; ++c) {
                segments.push_back({cursor, frag, tok});
                cursor += frag + gap_ms;
            }
            utt.events.push_back({start, cursor, kind});
            segments.push_back({cursor, token_ms, tok});
            cursor += token_ms + gap_ms;
            break;
        }
        }
    }
    const std::int64_t total_ms = cursor + 100 * rng.uniform_int(0, 2);

    const auto n_samples = static_cast<std::size_t>(total_ms * kSampleRate / 1000);
    std::vector<double> signal(n_samples, 0.0);
    constexpr double kRampSamples = 160.0;  // 10 ms
    constexpr std::array<double, 3> kPartialAmp = {0.5, 0.3, 0.2};
    for (const auto& seg : segments) {
        const auto tone = token_tone(seg.token);
        const auto begin = static_cast<std::size_t>(seg.start_ms * kSampleRate / 1000);
        const auto len = static_cast<std::size_t>(seg.dur_ms * kSampleRate / 1000);
        for (std::size_t n = 0; n < len; ++n) {
            const double t = static_cast<double>(n) / kSampleRate;
            const double edge = std::min(static_cast<double>(n), static_cast<double>(len - 1 - n));
            const double env = edge >= kRampSamples ? 1.0 : 0.5 - 0.5 * std::cos(std::numbers::pi * edge / kRampSamples);
            double v = 0.0;
            for (std::size_t p = 0; p < 3; ++p) {
                v += kPartialAmp[p] * std::sin(2.0 * std::numbers::pi * tone.freqs[p] * pitch * t);
            }
            signal[begin + n] += amp * env * v;
        }
    }
    utt.audio.samples.resize(n_samples);
    for (std::size_t n = 0; n < n_samples; ++n) {
        const double v = signal[n] + cfg.noise_std * rng.normal();
        utt.audio.samples[n] = pcm16_to_float(float_to_pcm16(static_cast<float>(v)));
    }
    return utt;
}

std::vector<SynthUtterance> synth_corpus(const SynthConfig& cfg, std::size_t jobs) {
    const auto bands = assign_bands(cfg);
    std::vector<SynthUtterance> out(cfg.n_utts);
    parallel_for(cfg.n_utts, jobs, [&](std::size_t i) { out[i] = synth_utterance(cfg, i, bands[i]); });
    return out;
}

// ---------------------------------------------------------------------------

std::string manifest_line(const ManifestRecord& rec) {
    nlohmann::ordered_json j;
    j["id"] = rec.id;
    j["split"] = rec.split;
    j["wav"] = rec.wav;
    j["annotation"] = rec.annotation;
    j["transcript"] = rec.transcript;
    j["severity"] = std::string(severity_name(rec.band));
    j["stutter_fraction"] = rec.stutter_fraction;
    j["n_tokens"] = rec.n_tokens;
    auto events = nlohmann::ordered_json::array();
    for (const auto& ev : rec.events) {
        events.push_back({{"onset_ms", ev.onset_ms}, {"tag", std::string(stutter_tag(ev.kind))}, {"offset_ms", ev.offset_ms}});
    }
    j["events"] = events;
    return j.dump();
}

ManifestRecord parse_manifest_line(std::string_view line) {
    try {
        const auto j = nlohmann::json::parse(line);
        ManifestRecord rec;
        rec.id = j.at("id").get<std::string>();
        rec.split = j.at("split").get<std::string>();
        rec.wav = j.at("wav").get<std::string>();
        rec.annotation = j.at("annotation").get<std::string>();
        rec.transcript = j.at("transcript").get<std::vector<std::string>>();
        const auto band = severity_from_name(j.at("severity").get<std::string>());
        if (!band) throw Error(ErrorKind::Parse, "unknown severity '" + j.at("severity").get<std::string>() + "'");
        rec.band = *band;
        rec.stutter_fraction = j.at("stutter_fraction").get<double>();
        rec.n_tokens = j.at("n_tokens").get<std::size_t>();
        for (const auto& e : j.at("events")) {
            const auto tag = e.at("tag").get<std::string>();
            const auto type = stutter_type_from_tag(tag);
            if (!type) throw Error(ErrorKind::UnknownTag, "tag '" + tag + "'");
            rec.events.push_back({e.at("onset_ms").get<std::int64_t>(), e.at("offset_ms").get<std::int64_t>(), *type});
        }
        return rec;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::Parse, std::string("manifest record: ") + e.what());
    }
}

std::vector<ManifestRecord> read_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::Io, "cannot open manifest " + path.string());
    std::vector<ManifestRecord> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            out.push_back(parse_manifest_line(line));
        } catch (const Error& e) {
            throw Error(e.kind(), path.string() + ":" + std::to_string(line_no) + ": " + e.detail());
        }
    }
    return out;
}

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestRecord>& records) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorKind::Io, "cannot write manifest " + path.string());
    for (const auto& rec : records) out << manifest_line(rec) << '\n';
}

} // namespace stuttergate
