#include "stuttergate/config.h"

#include "stuttergate/detail/binary_io.h"

#include <json.hpp>

#include <algorithm>
#include <set>

namespace stuttergate {

namespace {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

void reject_unknown(const json& obj, const std::string& section, std::initializer_list<const char*> allowed) {
    if (!obj.is_object()) throw Error(ErrorKind::Config, "'" + section + "' must be an object");
    for (const auto& [key, value] : obj.items()) {
        const bool known = std::any_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; });
        if (!known) {
            throw Error(ErrorKind::Config, "unknown key '" + key + "' in " + (section.empty() ? "config" : "'" + section + "'"));
        }
    }
}

template <typename T>
void read(const json& obj, const char* key, T& out, const std::string& section) {
    if (!obj.contains(key)) return;
    try {
        out = obj.at(key).get<T>();
    } catch (const json::exception&) {
        throw Error(ErrorKind::Config, "'" + section + "." + key + "' has the wrong type");
    }
}

void read_size(const json& obj, const char* key, std::size_t& out, const std::string& section) {
    if (!obj.contains(key)) return;
    const auto& v = obj.at(key);
    if (!v.is_number_integer() || v.get<std::int64_t>() < 0) {
        throw Error(ErrorKind::Config, "'" + section + "." + key + "' must be a non-negative integer");
    }
    out = v.get<std::size_t>();
}

std::string pooling_name(Pooling p) { return p == Pooling::Flatten ? "flatten" : "global_average"; }

} // namespace

std::map<SeverityBand, double> reference_severity_mix() {
    constexpr double total = 44.0 + 364.0 + 336.0 + 981.0;
    return {{SeverityBand::Mild, 44.0 / total},
            {SeverityBand::Moderate, 364.0 / total},
            {SeverityBand::Severe, 336.0 / total},
            {SeverityBand::VerySevere, 981.0 / total}};
}

void RunConfig::validate() const {
    if (jobs == 0) throw Error(ErrorKind::Config, "jobs must be >= 1");
    if (out.empty()) throw Error(ErrorKind::Config, "output directory is empty");
    for (const char* split : {"asr_train", "asr_test", "clf_train", "test"}) synth_config(split).validate();
    mel.validate();
    classifier.arch.validate();
    if (classifier.arch.n_mels != mel.n_mels) {
        throw Error(ErrorKind::Config, "classifier.n_mels must equal features.n_mels");
    }
    if (classifier.batch_size < 2) throw Error(ErrorKind::Config, "classifier.batch_size must be >= 2");
    if (!(classifier.lr >= 0.0)) throw Error(ErrorKind::Config, "classifier.lr must be >= 0");
    transducer_arch(mel.n_mels, false).validate();
    if (transducer.batch_size == 0) throw Error(ErrorKind::Config, "transducer.batch_size must be >= 1");
    if (!(transducer.lr >= 0.0)) throw Error(ErrorKind::Config, "transducer.lr must be >= 0");
    if (!(transducer.clip_norm > 0.0)) throw Error(ErrorKind::Config, "transducer.clip_norm must be > 0");
    if (!(transducer.input_noise >= 0.0)) throw Error(ErrorKind::Config, "transducer.input_noise must be >= 0");
    if (lfr.enabled && lfr.policies.empty()) throw Error(ErrorKind::Config, "lfr.policies is empty");
}

SynthConfig RunConfig::synth_config(const std::string& split) const {
    SynthConfig s;
    s.min_tokens = corpus.min_tokens;
    s.max_tokens = corpus.max_tokens;
    s.max_stutter_fraction = corpus.max_stutter_fraction;
    s.repeat_probability = corpus.repeat_probability;
    s.noise_std = corpus.noise_std;
    s.id_prefix = split;
    if (split == "asr_train" || split == "asr_test") {
        s.severity_mix = {{SeverityBand::Normal, 1.0}};
        s.n_utts = split == "asr_train" ? corpus.asr_train : corpus.asr_test;
        s.seed = seed * 4 + (split == "asr_train" ? 0 : 1);
    } else if (split == "clf_train" || split == "test") {
        s.severity_mix = corpus.severity_mix;
        s.force_events = true;
        s.n_utts = split == "clf_train" ? corpus.clf_train : corpus.test;
        s.seed = seed * 4 + (split == "clf_train" ? 2 : 3);
    } else {
        throw Error(ErrorKind::Config, "unknown split '" + split + "'");
    }
    return s;
}

ClassifierTrainConfig RunConfig::classifier_train_config() const {
    ClassifierTrainConfig c;
    c.epochs = classifier.epochs;
    c.batch_size = classifier.batch_size;
    c.adam.lr = classifier.lr;
    c.pos_weight = classifier.pos_weight;
    c.seed = seed;
    return c;
}

TransducerArch RunConfig::transducer_arch(std::size_t input_dim, bool flag_input) const {
    TransducerArch a;
    a.input_dim = input_dim + (flag_input ? 1 : 0);
    a.flag_input = flag_input;
    a.encoder_hidden = transducer.encoder_hidden;
    a.predictor_hidden = transducer.predictor_hidden;
    a.joint_hidden = transducer.joint_hidden;
    a.emission_cap = transducer.emission_cap;
    a.vocabulary = synth_vocabulary();
    return a;
}

TransducerTrainConfig RunConfig::transducer_train_config() const {
    TransducerTrainConfig t;
    t.epochs = transducer.epochs;
    t.batch_size = transducer.batch_size;
    t.adam.lr = transducer.lr;
    t.clip_norm = transducer.clip_norm;
    t.cosine_decay = transducer.cosine_decay;
    t.input_noise = transducer.input_noise;
    t.seed = seed;
    t.jobs = jobs;
    return t;
}

RunConfig parse_run_config(const std::string& json_text) {
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::exception& e) {
        throw Error(ErrorKind::Config, std::string("config is not valid JSON: ") + e.what());
    }
    reject_unknown(doc, "", {"seed", "jobs", "out", "corpus", "features", "classifier", "gate", "lfr", "transducer", "report"});
    RunConfig cfg;
    if (doc.contains("seed")) {
        std::size_t seed = 0;
        read_size(doc, "seed", seed, "");
        cfg.seed = seed;
    }
    read_size(doc, "jobs", cfg.jobs, "");
    if (doc.contains("out")) {
        std::string out;
        read(doc, "out", out, "");
        cfg.out = out;
    }

    if (doc.contains("corpus")) {
        const auto& c = doc["corpus"];
        reject_unknown(c, "corpus", {"asr_train", "asr_test", "clf_train", "test", "severity_mix", "min_tokens",
                                     "max_tokens", "max_stutter_fraction", "repeat_probability", "noise_std"});
        read_size(c, "asr_train", cfg.corpus.asr_train, "corpus");
        read_size(c, "asr_test", cfg.corpus.asr_test, "corpus");
        read_size(c, "clf_train", cfg.corpus.clf_train, "corpus");
        read_size(c, "test", cfg.corpus.test, "corpus");
        read_size(c, "min_tokens", cfg.corpus.min_tokens, "corpus");
        read_size(c, "max_tokens", cfg.corpus.max_tokens, "corpus");
        read(c, "max_stutter_fraction", cfg.corpus.max_stutter_fraction, "corpus");
        read(c, "repeat_probability", cfg.corpus.repeat_probability, "corpus");
        read(c, "noise_std", cfg.corpus.noise_std, "corpus");
        if (c.contains("severity_mix")) {
            const auto& m = c["severity_mix"];
            if (!m.is_object()) throw Error(ErrorKind::Config, "'corpus.severity_mix' must be an object");
            cfg.corpus.severity_mix.clear();
            for (const auto& [name, w] : m.items()) {
                const auto band = severity_from_name(name);
                if (!band) throw Error(ErrorKind::Config, "unknown severity band '" + name + "' in corpus.severity_mix");
                if (!w.is_number()) throw Error(ErrorKind::Config, "severity weight for '" + name + "' must be a number");
                cfg.corpus.severity_mix[*band] = w.get<double>();
            }
        }
    }

    if (doc.contains("features")) {
        const auto& f = doc["features"];
        reject_unknown(f, "features", {"n_mels", "f_min", "f_max", "log_floor"});
        read_size(f, "n_mels", cfg.mel.n_mels, "features");
        read(f, "f_min", cfg.mel.f_min, "features");
        read(f, "f_max", cfg.mel.f_max, "features");
        read(f, "log_floor", cfg.mel.log_floor, "features");
        cfg.classifier.arch.n_mels = cfg.mel.n_mels;
    }

    if (doc.contains("classifier")) {
        const auto& c = doc["classifier"];
        reject_unknown(c, "classifier", {"epochs", "batch_size", "lr", "pos_weight", "conv1_channels", "conv1_kernel",
                                         "conv1_stride", "conv2_channels", "conv2_kernel", "conv2_stride", "fc1_width",
                                         "pooling", "bn_eps", "bn_momentum"});
        auto& a = cfg.classifier.arch;
        read_size(c, "epochs", cfg.classifier.epochs, "classifier");
        read_size(c, "batch_size", cfg.classifier.batch_size, "classifier");
        read(c, "lr", cfg.classifier.lr, "classifier");
        read(c, "pos_weight", cfg.classifier.pos_weight, "classifier");
        read_size(c, "conv1_channels", a.conv1_channels, "classifier");
        read_size(c, "conv1_kernel", a.conv1_kernel, "classifier");
        read_size(c, "conv1_stride", a.conv1_stride, "classifier");
        read_size(c, "conv2_channels", a.conv2_channels, "classifier");
        read_size(c, "conv2_kernel", a.conv2_kernel, "classifier");
        read_size(c, "conv2_stride", a.conv2_stride, "classifier");
        read_size(c, "fc1_width", a.fc1_width, "classifier");
        read(c, "bn_eps", a.bn_eps, "classifier");
        read(c, "bn_momentum", a.bn_momentum, "classifier");
        if (c.contains("pooling")) {
            std::string p;
            read(c, "pooling", p, "classifier");
            if (p == "flatten") {
                a.pooling = Pooling::Flatten;
            } else if (p == "global_average") {
                a.pooling = Pooling::GlobalAverage;
            } else {
                throw Error(ErrorKind::Config, "classifier.pooling must be 'flatten' or 'global_average'");
            }
        }
    }

    if (doc.contains("gate")) {
        const auto& g = doc["gate"];
        reject_unknown(g, "gate", {"mode", "flag_carries_posterior"});
        if (g.contains("mode")) {
            std::string mode;
            read(g, "mode", mode, "gate");
            cfg.gate.mode = gate_mode_from_name(mode);
        }
        read(g, "flag_carries_posterior", cfg.gate.flag_carries_posterior, "gate");
    }

    if (doc.contains("lfr")) {
        const auto& l = doc["lfr"];
        reject_unknown(l, "lfr", {"enabled", "policies"});
        read(l, "enabled", cfg.lfr.enabled, "lfr");
        if (l.contains("policies")) {
            std::vector<std::string> names;
            read(l, "policies", names, "lfr");
            cfg.lfr.policies.clear();
            for (const auto& n : names) {
                try {
                    cfg.lfr.policies.push_back(parse_vote_policy(n));
                } catch (const Error& e) {
                    throw Error(ErrorKind::Config, "lfr.policies: " + e.detail());
                }
            }
        }
    }

    if (doc.contains("transducer")) {
        const auto& t = doc["transducer"];
        reject_unknown(t, "transducer", {"encoder_hidden", "predictor_hidden", "joint_hidden", "emission_cap", "epochs",
                                         "batch_size", "lr", "clip_norm", "cosine_decay", "input_noise"});
        read_size(t, "encoder_hidden", cfg.transducer.encoder_hidden, "transducer");
        read_size(t, "predictor_hidden", cfg.transducer.predictor_hidden, "transducer");
        read_size(t, "joint_hidden", cfg.transducer.joint_hidden, "transducer");
        read_size(t, "emission_cap", cfg.transducer.emission_cap, "transducer");
        read_size(t, "epochs", cfg.transducer.epochs, "transducer");
        read_size(t, "batch_size", cfg.transducer.batch_size, "transducer");
        read(t, "lr", cfg.transducer.lr, "transducer");
        read(t, "clip_norm", cfg.transducer.clip_norm, "transducer");
        read(t, "cosine_decay", cfg.transducer.cosine_decay, "transducer");
        read(t, "input_noise", cfg.transducer.input_noise, "transducer");
    }

    if (doc.contains("report")) {
        const auto& r = doc["report"];
        reject_unknown(r, "report", {"overlay_count"});
        read_size(r, "overlay_count", cfg.report.overlay_count, "report");
    }

    cfg.validate();
    return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::string text;
    try {
        text = detail::read_text_file(path);
    } catch (const Error& e) {
        throw Error(ErrorKind::Config, "cannot read config: " + e.detail());
    }
    return parse_run_config(text);
}

std::string dump_run_config(const RunConfig& cfg) {
    ojson mix = ojson::object();
    for (const auto& [band, w] : cfg.corpus.severity_mix) mix[std::string(severity_name(band))] = w;
    std::vector<std::string> policies;
    for (const auto& p : cfg.lfr.policies) policies.push_back(p.name());
    const auto& a = cfg.classifier.arch;
    const ojson doc = {
        {"seed", cfg.seed},
        {"jobs", cfg.jobs},
        {"out", cfg.out.string()},
        {"corpus",
         {{"asr_train", cfg.corpus.asr_train},
          {"asr_test", cfg.corpus.asr_test},
          {"clf_train", cfg.corpus.clf_train},
          {"test", cfg.corpus.test},
          {"severity_mix", mix},
          {"min_tokens", cfg.corpus.min_tokens},
          {"max_tokens", cfg.corpus.max_tokens},
          {"max_stutter_fraction", cfg.corpus.max_stutter_fraction},
          {"repeat_probability", cfg.corpus.repeat_probability},
          {"noise_std", cfg.corpus.noise_std}}},
        {"features", {{"n_mels", cfg.mel.n_mels}, {"f_min", cfg.mel.f_min}, {"f_max", cfg.mel.f_max}, {"log_floor", cfg.mel.log_floor}}},
        {"classifier",
         {{"epochs", cfg.classifier.epochs},
          {"batch_size", cfg.classifier.batch_size},
          {"lr", cfg.classifier.lr},
          {"pos_weight", cfg.classifier.pos_weight},
          {"conv1_channels", a.conv1_channels},
          {"conv1_kernel", a.conv1_kernel},
          {"conv1_stride", a.conv1_stride},
          {"conv2_channels", a.conv2_channels},
          {"conv2_kernel", a.conv2_kernel},
          {"conv2_stride", a.conv2_stride},
          {"fc1_width", a.fc1_width},
          {"pooling", pooling_name(a.pooling)},
          {"bn_eps", a.bn_eps},
          {"bn_momentum", a.bn_momentum}}},
        {"gate", {{"mode", std::string(gate_mode_name(cfg.gate.mode))}, {"flag_carries_posterior", cfg.gate.flag_carries_posterior}}},
        {"lfr", {{"enabled", cfg.lfr.enabled}, {"policies", policies}}},
        {"transducer",
         {{"encoder_hidden", cfg.transducer.encoder_hidden},
          {"predictor_hidden", cfg.transducer.predictor_hidden},
          {"joint_hidden", cfg.transducer.joint_hidden},
          {"emission_cap", cfg.transducer.emission_cap},
          {"epochs", cfg.transducer.epochs},
          {"batch_size", cfg.transducer.batch_size},
          {"lr", cfg.transducer.lr},
          {"clip_norm", cfg.transducer.clip_norm},
          {"cosine_decay", cfg.transducer.cosine_decay},
          {"input_noise", cfg.transducer.input_noise}}},
        {"report", {{"overlay_count", cfg.report.overlay_count}}},
    };
    return doc.dump(2) + "\n";
}

} // namespace stuttergate
