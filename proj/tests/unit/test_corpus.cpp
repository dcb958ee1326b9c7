#include "doctest.h"
#include "oracles.h"
#include "support.h"

#include "stuttergate/corpus.h"
#include "stuttergate/random.h"

#include <set>

using namespace stuttergate;
using test_support::error_kind;
using namespace oracles;

TEST_CASE("annotation parsing") {
    const auto one = parse_annotations("[2367] [W] [4372]");
    REQUIRE(one.size() == 1);
    CHECK(one[0] == StutterEvent{2367, 4372, StutterType::WordRepetition});

    CHECK(parse_annotations("").empty());
    CHECK(parse_annotations("\n\n").empty());
    CHECK(error_kind([] { parse_annotations("[100] [W] [100]"); }) == ErrorKind::Range);
    CHECK(error_kind([] { parse_annotations("[100] [Q] [200]"); }) == ErrorKind::UnknownTag);
    const auto text = test_support::error_text([] { parse_annotations("[1] [W] [5]\n[100] [W 200]"); });
    CHECK(text.find("line 2") != std::string::npos);
    CHECK(error_kind([] { parse_annotations("[1] [W] [5]\n[100] [W 200]"); }) == ErrorKind::Parse);

    const auto sorted = parse_annotations("[900] [PW] [1000]\n[10] [PH] [50]\n");
    REQUIRE(sorted.size() == 2);
    CHECK(sorted[0].kind == StutterType::PhraseRepetition);
    CHECK(sorted[1].kind == StutterType::PartWordRepetition);
}

TEST_CASE("tag table is a bijection") {
    std::set<std::string_view> tags;
    for (auto t : kAllStutterTypes) {
        tags.insert(stutter_tag(t));
        CHECK(stutter_type_from_tag(stutter_tag(t)) == t);
    }
    CHECK(tags.size() == 8);
    CHECK(stutter_tag(StutterType::WordRepetition) == "W");
}

TEST_CASE("parse serialize parse is the identity") {
    Rng rng(21);
    for (int trial = 0; trial < 200; ++trial) {
        auto ev = random_events(rng, 20000);
        std::stable_sort(ev.begin(), ev.end(), [](auto& a, auto& b) { return a.onset_ms < b.onset_ms; });
        const auto once = parse_annotations(serialize_annotations(ev));
        CHECK(once == ev);
        CHECK(parse_annotations(serialize_annotations(once)) == once);
    }
}

TEST_CASE("frame labels for a word repetition") {
    const std::vector<StutterEvent> ev = {{2367, 4372, StutterType::WordRepetition}};
    const auto labels = label_frames(ev, 50).track.labels;
    CHECK(labels == per_ms_labels(ev, 50));
    CHECK(labels[23] == 0);  // 33 ms of overlap
    for (std::size_t f = 24; f <= 42; ++f) CHECK(labels[f] == 1);
    CHECK(labels[43] == 1);  // 72 ms of overlap
    CHECK(labels[44] == 0);
    std::size_t ones = 0;
    for (auto l : labels) ones += l;
    CHECK(ones == 20);

    CHECK(label_frames({}, 12).track.labels == std::vector<std::uint8_t>(12, 0));
    const std::vector<StutterEvent> whole = {{0, 1200, StutterType::Block}};
    CHECK(label_frames(whole, 12).track.labels == std::vector<std::uint8_t>(12, 1));

    const std::vector<StutterEvent> late = {{900, 1500, StutterType::Block}};
    const auto clipped = label_frames(late, 10);
    CHECK(clipped.warnings.size() == 1);
    CHECK(clipped.track.labels[9] == 1);
}

TEST_CASE("frame labels match the per-millisecond oracle") {
    Rng rng(22);
    for (int trial = 0; trial < 1000; ++trial) {
        const auto n_frames = static_cast<std::size_t>(rng.uniform_int(1, 60));
        const auto ev = random_events(rng, static_cast<std::int64_t>(n_frames) * 100 + 300);
        REQUIRE(label_frames(ev, n_frames).track.labels == per_ms_labels(ev, n_frames));
    }
}

TEST_CASE("adding an event never unlabels a frame") {
    Rng rng(23);
    for (int trial = 0; trial < 300; ++trial) {
        auto ev = random_events(rng, 3000);
        const auto before = label_frames(ev, 30).track.labels;
        const auto onset = rng.uniform_int(0, 2900);
        ev.push_back({onset, onset + rng.uniform_int(1, 400), StutterType::Block});
        const auto after = label_frames(ev, 30).track.labels;
        for (std::size_t f = 0; f < 30; ++f) CHECK(after[f] >= before[f]);
    }
}

TEST_CASE("severity bands") {
    CHECK(severity(0.005) == SeverityBand::Normal);
    CHECK(severity(0.01) == SeverityBand::Mild);
    CHECK(severity(0.06) == SeverityBand::Moderate);
    CHECK(severity(0.13) == SeverityBand::Severe);
    CHECK(severity(0.15) == SeverityBand::Severe);
    CHECK(severity(0.20) == SeverityBand::VerySevere);
    CHECK(severity(1.0) == SeverityBand::VerySevere);
    CHECK(error_kind([] { severity(-0.01); }) == ErrorKind::Domain);
    CHECK(error_kind([] { severity(1.5); }) == ErrorKind::Domain);
    for (auto b : kAllSeverityBands) CHECK(severity_from_name(severity_name(b)) == b);
}

TEST_CASE("synthetic corpus") {
    SynthConfig cfg;
    cfg.n_utts = 30;
    cfg.severity_mix = {{SeverityBand::Mild, 0.2}, {SeverityBand::Moderate, 0.3}, {SeverityBand::VerySevere, 0.5}};
    cfg.force_events = true;

    const auto a = synth_corpus(cfg);
    const auto b = synth_corpus(cfg, 3);
    REQUIRE(a.size() == 30);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].audio.samples == b[i].audio.samples);
        CHECK(a[i].events == b[i].events);
        CHECK(a[i].transcript == b[i].transcript);
    }

    std::map<SeverityBand, int> counts;
    for (const auto& u : a) {
        ++counts[u.band];
        CHECK(severity(u.stutter_fraction) == u.band);
        CHECK(!u.events.empty());
        CHECK(u.transcript.size() == u.n_tokens);
        const auto n_frames = frame_count(u.audio.samples.size());
        for (const auto& ev : u.events) {
            CHECK(ev.duration_ms() >= 100);
            const auto labels = per_ms_labels({ev}, n_frames);
            CHECK(std::count(labels.begin(), labels.end(), 1) >= 1);
        }
    }
    CHECK(counts[SeverityBand::Mild] == 6);
    CHECK(counts[SeverityBand::Moderate] == 9);
    CHECK(counts[SeverityBand::VerySevere] == 15);

    cfg.seed = 8;
    CHECK(synth_corpus(cfg)[0].audio.samples != a[0].audio.samples);
}

TEST_CASE("very severe mix stays at or above twenty percent") {
    SynthConfig cfg;
    cfg.n_utts = 25;
    cfg.force_events = true;
    for (const auto& u : synth_corpus(cfg)) CHECK(u.stutter_fraction >= 0.20);
}

TEST_CASE("band quotas follow the mix") {
    SynthConfig cfg;
    cfg.n_utts = 100;
    cfg.severity_mix = {{SeverityBand::Mild, 44 / 1725.0},
                        {SeverityBand::Moderate, 364 / 1725.0},
                        {SeverityBand::Severe, 336 / 1725.0},
                        {SeverityBand::VerySevere, 981 / 1725.0}};
    std::map<SeverityBand, double> counts;
    for (auto b : assign_bands(cfg)) counts[b] += 1;
    for (const auto& [band, w] : cfg.severity_mix) CHECK(std::abs(counts[band] - 100 * w) < 1.0);
}

TEST_CASE("synth configuration errors") {
    SynthConfig normal_forced;
    normal_forced.severity_mix = {{SeverityBand::Normal, 1.0}};
    normal_forced.force_events = true;
    CHECK(error_kind([&] { normal_forced.validate(); }) == ErrorKind::Config);

    SynthConfig over;
    over.severity_mix = {{SeverityBand::Mild, 0.7}, {SeverityBand::Severe, 0.6}};
    CHECK(error_kind([&] { over.validate(); }) == ErrorKind::Config);

    SynthConfig negative;
    negative.severity_mix = {{SeverityBand::Mild, 1.5}, {SeverityBand::Severe, -0.5}};
    CHECK(error_kind([&] { negative.validate(); }) == ErrorKind::Config);
}

TEST_CASE("manifest round trip") {
    SynthConfig cfg;
    cfg.n_utts = 3;
    const auto utts = synth_corpus(cfg);
    std::vector<ManifestRecord> recs;
    for (const auto& u : utts) {
        ManifestRecord r;
        r.id = u.id;
        r.split = "test";
        r.wav = "wav/" + u.id + ".wav";
        r.annotation = "ann/" + u.id + ".txt";
        r.transcript = u.transcript;
        r.band = u.band;
        r.stutter_fraction = u.stutter_fraction;
        r.n_tokens = u.n_tokens;
        r.events = u.events;
        recs.push_back(r);
    }
    test_support::TempDir dir("manifest");
    write_manifest(dir.path() / "m.jsonl", recs);
    const auto back = read_manifest(dir.path() / "m.jsonl");
    REQUIRE(back.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(back[i].id == recs[i].id);
        CHECK(back[i].transcript == recs[i].transcript);
        CHECK(back[i].events == recs[i].events);
        CHECK(back[i].band == recs[i].band);
        CHECK(back[i].stutter_fraction == recs[i].stutter_fraction);
        CHECK(manifest_line(back[i]) == manifest_line(recs[i]));
    }
    CHECK(error_kind([] { parse_manifest_line("{\"id\": 3"); }) == ErrorKind::Parse);
}
