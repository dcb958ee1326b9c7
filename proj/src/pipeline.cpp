#include "stuttergate/pipeline.h"

#include "stuttergate/detail/binary_io.h"
#include "stuttergate/metrics.h"
#include "stuttergate/parallel.h"
#include "stuttergate/report.h"

#include <json.hpp>

#include <fstream>
#include <map>

namespace stuttergate {

namespace fs = std::filesystem;

namespace {

constexpr const char* kSplits[] = {"asr_train", "asr_test", "clf_train", "test"};

void log(const StageOptions& opt, const std::string& stage, const std::string& msg) {
    if (opt.log) opt.log("[" + stage + "] " + msg);
}

void require(const fs::path& path, const std::string& stage) {
    if (!fs::exists(path)) {
        throw Error(ErrorKind::Io, path.string() + " not found; run the '" + stage + "' stage first");
    }
}

void refuse_overwrite(const fs::path& path, const StageOptions& opt) {
    if (fs::exists(path) && !opt.force) {
        throw Error(ErrorKind::Io, path.string() + " already exists; pass --force to overwrite");
    }
}

/// Echoes the config, marks the run incomplete while `body` runs, and names
/// the stage in any error.
template <typename Fn>
void stage(const RunConfig& cfg, const std::string& name, Fn&& body) {
    const Layout L{cfg.out};
    fs::create_directories(L.root);
    detail::write_text_file(L.config_echo(), dump_run_config(cfg));
    detail::write_text_file(L.sentinel(), "running " + name + "\n");
    try {
        body();
    } catch (const Error& e) {
        detail::write_text_file(L.sentinel(), "failed " + name + ": " + e.what() + "\n");
        throw Error(e.kind(), "stage '" + name + "': " + e.detail());
    } catch (const std::exception& e) {
        detail::write_text_file(L.sentinel(), "failed " + name + ": " + e.what() + "\n");
        throw Error(ErrorKind::Io, "stage '" + name + "': " + e.what());
    }
    fs::remove(L.sentinel());
}

std::vector<ManifestRecord> records_of(const Layout& L, const std::string& split) {
    require(L.manifest(), "synth");
    std::vector<ManifestRecord> out;
    for (auto& r : read_manifest(L.manifest())) {
        if (r.split == split) out.push_back(std::move(r));
    }
    return out;
}

std::vector<FeatureMatrix> load_decoder_features(const Layout& L, const std::vector<ManifestRecord>& recs,
                                                 const std::string& split, std::size_t jobs) {
    std::vector<FeatureMatrix> out(recs.size());
    parallel_for(recs.size(), jobs, [&](std::size_t i) {
        const auto path = L.decoder_features(split, recs[i].id);
        require(path, "extract");
        out[i] = read_feature_file(path);
        out[i].utterance_id = recs[i].id;
    });
    return out;
}

std::vector<ClassifierFeatureBank> load_banks(const Layout& L, const std::vector<ManifestRecord>& recs,
                                              const std::string& split, std::size_t jobs) {
    std::vector<ClassifierFeatureBank> out(recs.size());
    parallel_for(recs.size(), jobs, [&](std::size_t i) {
        const auto path = L.classifier_bank(split, recs[i].id);
        require(path, "extract");
        out[i] = bank_from_logmel(read_feature_file(path));
        out[i].logmel.utterance_id = recs[i].id;
    });
    return out;
}

std::vector<std::uint8_t> labels_of(const ManifestRecord& rec, std::size_t n_frames) {
    return label_frames(rec.events, n_frames).track.labels;
}

FeatureMatrix with_flag_column(const FeatureMatrix& f, std::span<const std::uint8_t> flags) {
    FeatureMatrix out(f.rows, f.cols + 1);
    out.utterance_id = f.utterance_id;
    for (std::size_t r = 0; r < f.rows; ++r) {
        std::copy(f.row(r).begin(), f.row(r).end(), out.row(r).begin());
        out.at(r, f.cols) = flags.empty() ? 0.0 : static_cast<double>(flags[r]);
    }
    return out;
}

bool flag_mode(GateMode m) { return m == GateMode::Flag || m == GateMode::SkipAndFlag; }

TransducerNets train_asr_model(const RunConfig& cfg, const std::vector<FeatureMatrix>& feats,
                               const std::vector<std::vector<std::string>>& transcripts, std::size_t input_dim,
                               bool flag_input, const fs::path& history, const StageOptions& opt,
                               const std::string& label) {
    const TransducerArch arch = cfg.transducer_arch(input_dim, flag_input);
    std::vector<TransducerExample> ex;
    ex.reserve(feats.size());
    for (std::size_t i = 0; i < feats.size(); ++i) ex.push_back({&feats[i], encode_tokens(arch, transcripts[i])});
    log(opt, "train-asr", "training " + label + " on " + std::to_string(ex.size()) + " utterances");
    auto res = train_transducer(ex, cfg.transducer_train_config(), init_transducer(arch, cfg.seed));
    std::string csv = "epoch,loss\n";
    char buf[64];
    for (std::size_t e = 0; e < res.epoch_loss.size(); ++e) {
        std::snprintf(buf, sizeof buf, "%zu,%.17g\n", e + 1, res.epoch_loss[e]);
        csv += buf;
    }
    detail::write_text_file(history, csv);
    if (!res.epoch_loss.empty()) {
        std::snprintf(buf, sizeof buf, "%.4f", res.epoch_loss.back());
        log(opt, "train-asr", label + " final epoch loss " + buf);
    }
    return std::move(res.nets);
}

std::vector<Hypothesis> decode_all(const TransducerNets& nets, const std::vector<FeatureMatrix>& inputs,
                                   const std::vector<ManifestRecord>& recs, std::size_t jobs) {
    std::vector<Hypothesis> hyps(inputs.size());
    parallel_for(inputs.size(), jobs, [&](std::size_t i) { hyps[i] = greedy_decode(nets, inputs[i], recs[i].id); });
    return hyps;
}

} // namespace

void write_posteriors(const fs::path& path, const std::vector<PosteriorTrack>& tracks) {
    std::string text;
    for (const auto& t : tracks) {
        const nlohmann::ordered_json j = {{"id", t.utterance_id}, {"posteriors", t.posteriors}};
        text += j.dump();
        text += '\n';
    }
    detail::write_text_file(path, text);
}

std::vector<PosteriorTrack> read_posteriors(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
    std::vector<PosteriorTrack> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            out.push_back(make_posterior_track(j.at("posteriors").get<std::vector<double>>(), j.at("id")));
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorKind::Parse, path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

void run_synth(const RunConfig& cfg, const StageOptions& opt) {
    cfg.validate();
    const Layout L{cfg.out};
    refuse_overwrite(L.manifest(), opt);
    stage(cfg, "synth", [&] {
        const fs::path tmp = L.root / "corpus.partial";
        fs::remove_all(tmp);
        try {
            std::vector<ManifestRecord> records;
            for (const char* split : kSplits) {
                const SynthConfig sc = cfg.synth_config(split);
                const auto utts = synth_corpus(sc, cfg.jobs);
                fs::create_directories(tmp / split);
                std::vector<ManifestRecord> recs(utts.size());
                parallel_for(utts.size(), cfg.jobs, [&](std::size_t i) {
                    const auto& u = utts[i];
                    auto& r = recs[i];
                    r.id = u.id;
                    r.split = split;
                    r.wav = std::string(split) + "/" + u.id + ".wav";
                    r.annotation = std::string(split) + "/" + u.id + ".txt";
                    r.transcript = u.transcript;
                    r.band = u.band;
                    r.stutter_fraction = u.stutter_fraction;
                    r.n_tokens = u.n_tokens;
                    r.events = u.events;
                    write_wav(tmp / r.wav, u.audio);
                    detail::write_text_file(tmp / r.annotation, serialize_annotations(u.events));
                });
                log(opt, "synth", std::string(split) + ": " + std::to_string(recs.size()) + " utterances");
                records.insert(records.end(), recs.begin(), recs.end());
            }
            write_manifest(tmp / "manifest.jsonl", records);
            fs::remove_all(L.corpus());
            fs::rename(tmp, L.corpus());
        } catch (...) {
            fs::remove_all(tmp);
            throw;
        }
    });
}

void run_extract(const RunConfig& cfg, const StageOptions& opt) {
    cfg.validate();
    const Layout L{cfg.out};
    refuse_overwrite(L.features(), opt);
    stage(cfg, "extract", [&] {
        require(L.manifest(), "synth");
        const auto records = read_manifest(L.manifest());
        fs::remove_all(L.features());
        for (const char* split : kSplits) fs::create_directories(L.features() / split);
        parallel_for(records.size(), cfg.jobs, [&](std::size_t i) {
            const auto& r = records[i];
            const AudioBuffer audio = read_wav(L.corpus() / r.wav);
            write_feature_file(L.decoder_features(r.split, r.id), decoder_features(audio, cfg.mel, r.id));
            if (r.split == "clf_train" || r.split == "test") {
                write_feature_file(L.classifier_bank(r.split, r.id), classifier_feature_bank(audio, cfg.mel, r.id).logmel);
            }
        });
        log(opt, "extract", std::to_string(records.size()) + " utterances");
    });
}

void run_train_classifier(const RunConfig& cfg, const StageOptions& opt) {
    cfg.validate();
    const Layout L{cfg.out};
    const fs::path ckpt = L.checkpoints() / "classifier.sgck";
    refuse_overwrite(ckpt, opt);
    stage(cfg, "train-clf", [&] {
        const auto recs = records_of(L, "clf_train");
        const auto banks = load_banks(L, recs, "clf_train", cfg.jobs);
        std::vector<ClassifierExample> examples;
        for (std::size_t i = 0; i < recs.size(); ++i) {
            const auto labels = labels_of(recs[i], banks[i].n_frames);
            for (std::size_t f = 0; f < banks[i].n_frames; ++f) {
                examples.push_back({banks[i].window_data(f), static_cast<double>(labels[f])});
            }
        }
        log(opt, "train-clf", std::to_string(examples.size()) + " frames from " + std::to_string(recs.size()) +
                                  " utterances");
        const auto res = train_classifier(examples, cfg.classifier_train_config(), cfg.classifier.arch);
        for (const auto& m : res.history) {
            char buf[96];
            std::snprintf(buf, sizeof buf, "epoch %zu loss %.4f train PR-AUC %.4f", m.epoch, m.loss, m.pr_auc);
            log(opt, "train-clf", buf);
        }
        fs::create_directories(L.checkpoints());
        save_classifier(ckpt, res.state);
        write_history_csv(L.checkpoints() / "classifier_history.csv", res.history);
    });
}

void run_eval_classifier(const RunConfig& cfg, const StageOptions& opt) {
    cfg.validate();
    const Layout L{cfg.out};
    refuse_overwrite(L.posteriors(), opt);
    stage(cfg, "eval-clf", [&] {
        const fs::path ckpt = L.checkpoints() / "classifier.sgck";
        require(ckpt, "train-clf");
        const TrainState state = load_classifier(ckpt);
        const auto recs = records_of(L, "test");
        std::vector<PosteriorTrack> tracks(recs.size());
        parallel_for(recs.size(), cfg.jobs, [&](std::size_t i) {
            const auto path = L.classifier_bank("test", recs[i].id);
            require(path, "extract");
            auto bank = bank_from_logmel(read_feature_file(path));
            bank.logmel.utterance_id = recs[i].id;
            tracks[i] = predict_track(bank, state);
        });
        fs::create_directories(L.decodes());
        write_posteriors(L.posteriors(), tracks);
        log(opt, "eval-clf", std::to_string(tracks.size()) + " posterior tracks");
    });
}

void run_gate(const RunConfig& cfg, const StageOptions& opt) {
    cfg.validate();
    const Layout L{cfg.out};
    refuse_overwrite(L.features() / "gated_classifier", opt);
    stage(cfg, "gate", [&] {
        require(L.posteriors(), "eval-clf");
        const auto recs = records_of(L, "test");
        const auto tracks = read_posteriors(L.posteriors());
        if (tracks.size() != recs.size()) {
            throw Error(ErrorKind::Shape, "posteriors cover " + std::to_string(tracks.size()) + " utterances, test has " +
                                              std::to_string(recs.size()) + "; rerun 'eval-clf'");
        }
        const auto feats = load_decoder_features(L, recs, "test", cfg.jobs);
        for (const char* system : {"classifier", "oracle"}) {
            fs::remove_all(L.features() / (std::string("gated_") + system));
            fs::create_directories(L.features() / (std::string("gated_") + system));
        }
        std::vector<std::size_t> dropped(recs.size()), dropped_oracle(recs.size());
        parallel_for(recs.size(), cfg.jobs, [&](std::size_t i) {
            if (tracks[i].utterance_id != recs[i].id) {
                throw Error(ErrorKind::Shape, "posterior track order does not match the manifest at " + recs[i].id);
            }
            const auto g = gate(feats[i], tracks[i], cfg.gate);
            write_gated_stream(L.gated("classifier", recs[i].id), L.gated_index("classifier", recs[i].id), g);
            const auto oracle = gate(feats[i], track_from_labels(labels_of(recs[i], feats[i].rows), recs[i].id), cfg.gate);
            write_gated_stream(L.gated("oracle", recs[i].id), L.gated_index("oracle", recs[i].id), oracle);
            dropped[i] = g.drop_count;
            dropped_oracle[i] = oracle.drop_count;
        });
        std::size_t d = 0, o = 0;
        for (std::size_t i = 0; i < recs.size(); ++i) {
            d += dropped[i];
            o += dropped_oracle[i];
        }
        log(opt, "gate", "mode " + std::string(gate_mode_name(cfg.gate.mode)) + ", dropped " + std::to_string(d) +
                             " frames (oracle " + std::to_string(o) + ")");
    });
}

void run_train_asr(const RunConfig& cfg, const StageOptions& opt) {
    cfg.validate();
    const Layout L{cfg.out};
    const fs::path ckpt = L.checkpoints() / "asr.sgck";
    refuse_overwrite(ckpt, opt);
    stage(cfg, "train-asr", [&] {
        const auto recs = records_of(L, "asr_train");
        const auto feats = load_decoder_features(L, recs, "asr_train", cfg.jobs);
        std::vector<std::vector<std::string>> transcripts;
        for (const auto& r : recs) transcripts.push_back(r.transcript);
        fs::create_directories(L.checkpoints());

        const auto nets = train_asr_model(cfg, feats, transcripts, cfg.mel.n_mels, false,
                                          L.checkpoints() / "asr_history.csv", opt, "asr");
        save_transducer(ckpt, nets);

        if (cfg.lfr.enabled) {
            std::vector<FeatureMatrix> stacked;
            stacked.reserve(feats.size());
            for (const auto& f : feats) stacked.push_back(stack_features(f));
            const auto lfr = train_asr_model(cfg, stacked, transcripts, kLfrStack * cfg.mel.n_mels, false,
                                             L.checkpoints() / "asr_lfr_history.csv", opt, "asr_lfr");
            save_transducer(L.checkpoints() / "asr_lfr.sgck", lfr);
        }

        if (flag_mode(cfg.gate.mode)) {
            // Clean speech with the flag off plus stuttered speech flagged by its labels.
            std::vector<FeatureMatrix> flagged;
            auto flag_transcripts = transcripts;
            for (const auto& f : feats) flagged.push_back(with_flag_column(f, {}));
            const auto stutter_recs = records_of(L, "clf_train");
            const auto stutter_feats = load_decoder_features(L, stutter_recs, "clf_train", cfg.jobs);
            for (std::size_t i = 0; i < stutter_recs.size(); ++i) {
                flagged.push_back(with_flag_column(stutter_feats[i], labels_of(stutter_recs[i], stutter_feats[i].rows)));
                flag_transcripts.push_back(stutter_recs[i].transcript);
            }
            const auto nets_flag = train_asr_model(cfg, flagged, flag_transcripts, cfg.mel.n_mels, true,
                                                   L.checkpoints() / "asr_flag_history.csv", opt, "asr_flag");
            save_transducer(L.checkpoints() / "asr_flag.sgck", nets_flag);
        }
    });
}

void run_decode(const RunConfig& cfg, const StageOptions& opt) {
    cfg.validate();
    const Layout L{cfg.out};
    refuse_overwrite(L.hypotheses("baseline"), opt);
    stage(cfg, "decode", [&] {
        require(L.checkpoints() / "asr.sgck", "train-asr");
        const auto nets = load_transducer(L.checkpoints() / "asr.sgck");
        fs::create_directories(L.decodes());

        const auto clean = records_of(L, "asr_test");
        write_hypotheses(L.hypotheses("asr_test"), nets.arch,
                         decode_all(nets, load_decoder_features(L, clean, "asr_test", cfg.jobs), clean, cfg.jobs));

        const auto recs = records_of(L, "test");
        write_hypotheses(L.hypotheses("baseline"), nets.arch,
                         decode_all(nets, load_decoder_features(L, recs, "test", cfg.jobs), recs, cfg.jobs));

        TransducerNets gated_nets;
        if (flag_mode(cfg.gate.mode)) {
            require(L.checkpoints() / "asr_flag.sgck", "train-asr");
            gated_nets = load_transducer(L.checkpoints() / "asr_flag.sgck");
        } else {
            gated_nets = nets;
        }
        for (const char* system : {"classifier", "oracle"}) {
            std::vector<FeatureMatrix> inputs(recs.size());
            parallel_for(recs.size(), cfg.jobs, [&](std::size_t i) {
                const auto path = L.gated(system, recs[i].id);
                require(path, "gate");
                const auto stream = read_gated_stream(path, L.gated_index(system, recs[i].id));
                inputs[i] = stream.empty() ? FeatureMatrix(0, gated_nets.arch.input_dim) : stream.as_matrix();
            });
            write_hypotheses(L.hypotheses(std::string(system) == "classifier" ? "gated" : "oracle"), gated_nets.arch,
                             decode_all(gated_nets, inputs, recs, cfg.jobs));
        }
        log(opt, "decode", "decoded " + std::to_string(recs.size()) + " test and " + std::to_string(clean.size()) +
                               " clean utterances");
    });
}

void run_sweep(const RunConfig& cfg, const StageOptions& opt) {
    cfg.validate();
    const Layout L{cfg.out};
    if (!cfg.lfr.enabled) {
        log(opt, "sweep", "lfr disabled; nothing to do");
        return;
    }
    refuse_overwrite(L.lfr_stats(), opt);
    stage(cfg, "sweep", [&] {
        require(L.checkpoints() / "asr_lfr.sgck", "train-asr");
        require(L.posteriors(), "eval-clf");
        const auto nets = load_transducer(L.checkpoints() / "asr_lfr.sgck");
        const auto recs = records_of(L, "test");
        const auto tracks = read_posteriors(L.posteriors());
        if (tracks.size() != recs.size()) throw Error(ErrorKind::Shape, "posteriors do not cover the test split");
        const auto feats = load_decoder_features(L, recs, "test", cfg.jobs);
        const std::size_t P = cfg.lfr.policies.size();

        std::vector<Hypothesis> base(recs.size());
        std::vector<std::vector<Hypothesis>> per_policy(P, std::vector<Hypothesis>(recs.size()));
        std::vector<std::vector<std::pair<std::size_t, std::size_t>>> counts(recs.size());
        GateConfig skip;
        skip.mode = GateMode::Skip;
        parallel_for(recs.size(), cfg.jobs, [&](std::size_t i) {
            base[i] = greedy_decode(nets, stack_features(feats[i]), recs[i].id);
            const auto result = sweep(tracks[i], feats[i], cfg.lfr.policies, skip);
            for (std::size_t p = 0; p < P; ++p) {
                per_policy[p][i] = greedy_decode(nets, result.rows[p].stream, recs[i].id);
                counts[i].emplace_back(result.rows[p].n_stacks, result.rows[p].flagged);
            }
        });
        fs::create_directories(L.decodes());
        write_hypotheses(L.hypotheses("lfr_baseline"), nets.arch, base);
        for (std::size_t p = 0; p < P; ++p) {
            write_hypotheses(L.hypotheses("lfr_" + cfg.lfr.policies[p].name()), nets.arch, per_policy[p]);
        }
        std::string csv = "id,policy,n_stacks,flagged\n";
        for (std::size_t i = 0; i < recs.size(); ++i) {
            for (std::size_t p = 0; p < P; ++p) {
                csv += recs[i].id + "," + cfg.lfr.policies[p].name() + "," + std::to_string(counts[i][p].first) + "," +
                       std::to_string(counts[i][p].second) + "\n";
            }
        }
        detail::write_text_file(L.lfr_stats(), csv);
        log(opt, "sweep", std::to_string(P) + " policies over " + std::to_string(recs.size()) + " utterances");
    });
}

void run_report(const RunConfig& cfg, const StageOptions& opt) {
    cfg.validate();
    const Layout L{cfg.out};
    const auto data = collect_report_data(L, cfg);
    stage(cfg, "report", [&] {
        write_report(L, cfg, data);
        log(opt, "report", "wrote " + L.reports().string());
    });
}

void run_pipeline(const RunConfig& cfg, const StageOptions& opt) {
    cfg.validate();
    run_synth(cfg, opt);
    run_extract(cfg, opt);
    run_train_classifier(cfg, opt);
    run_eval_classifier(cfg, opt);
    run_gate(cfg, opt);
    run_train_asr(cfg, opt);
    run_decode(cfg, opt);
    run_sweep(cfg, opt);
    run_report(cfg, opt);
}

} // namespace stuttergate
