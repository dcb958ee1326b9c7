#pragma once

#include "stuttergate/checkpoint.h"
#include "stuttergate/error.h"
#include "stuttergate/features.h"
#include "stuttergate/gate.h"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace stuttergate {

inline constexpr std::size_t kBlank = 0;

/// Label 0 is blank (and the predictor's start symbol); words map to 1..K.
struct TransducerArch {
    std::size_t input_dim = 64;
    /// The last input column is a stutter flag in {0, 1}; it enters the
    /// encoder as x - 0.5 and bypasses input normalization.
    bool flag_input = false;
    std::size_t encoder_hidden = 64;
    std::size_t predictor_hidden = 64;
    std::size_t joint_hidden = 64;
    std::vector<std::string> vocabulary;
    std::size_t emission_cap = 5;

    std::size_t n_outputs() const { return vocabulary.size() + 1; }
    void validate() const;
    std::string to_json() const;
    static TransducerArch from_json(const std::string& text);
    bool operator==(const TransducerArch&) const = default;
};

/// Parameters: enc.{w_x, w_h, b}, pred.{embed, w_h, b},
/// joint.{w_zt, w_zu, b_z, w_h, b_h}. Buffers: norm.{mean, std}.
struct TransducerNets {
    TransducerArch arch;
    TensorSet params;
    TensorSet buffers;
};

TransducerNets init_transducer(const TransducerArch& arch, std::uint64_t seed);
void zero_transducer_weights(TransducerNets& nets);

/// Per-dimension mean and std over every row of the given matrices.
void fit_input_normalization(TransducerNets& nets, std::span<const FeatureMatrix> features);

std::size_t token_id(const TransducerArch& arch, const std::string& word);
std::vector<std::size_t> encode_tokens(const TransducerArch& arch, const std::vector<std::string>& words);
std::vector<std::string> decode_tokens(const TransducerArch& arch, const std::vector<std::size_t>& ids);

/// Probabilities over blank + K tokens for one encoder and one predictor state.
std::vector<double> joint(const TransducerNets& nets, std::span<const double> h_enc, std::span<const double> h_pred);

/// Encoder states [T x H_enc] for a feature sequence.
FeatureMatrix encode(const TransducerNets& nets, const FeatureMatrix& features);

struct Lattice {
    std::size_t T = 0;
    std::size_t U = 0;
    std::vector<double> log_alpha;  // [T x (U+1)]
    std::vector<double> log_beta;   // [T x (U+1)]
    std::vector<double> log_blank;  // [T x (U+1)]
    std::vector<double> log_emit;   // [T x (U+1)], last column unused

    double at(const std::vector<double>& v, std::size_t t, std::size_t u) const { return v[t * (U + 1) + u]; }
};

struct LossResult {
    double nll = 0.0;
    Lattice lattice;
};

/// Negative log-likelihood of `target` (token ids 1..K); gradients are
/// accumulated into `grads` when given.
LossResult transducer_loss(const TransducerNets& nets, const FeatureMatrix& features,
                           std::span<const std::size_t> target, TensorSet* grads = nullptr);

struct Hypothesis {
    std::string utterance_id;
    std::vector<std::size_t> tokens;
    double score = 0.0;
};

Hypothesis greedy_decode(const TransducerNets& nets, const FeatureMatrix& features, const std::string& utterance_id = {});
Hypothesis greedy_decode(const TransducerNets& nets, const GatedStream& stream, const std::string& utterance_id = {});

struct TransducerExample {
    const FeatureMatrix* features = nullptr;
    std::vector<std::size_t> target;
};

struct TransducerTrainConfig {
    std::size_t epochs = 30;
    std::size_t batch_size = 8;
    AdamConfig adam{3e-3};
    double clip_norm = 5.0;
    /// Learning rate follows a half cosine from adam.lr down to 0.
    bool cosine_decay = true;
    /// Gaussian noise added to training inputs, in units of each dimension's std.
    double input_noise = 0.0;
    std::uint64_t seed = 1;
    std::size_t jobs = 1;
};

struct TransducerTrainResult {
    TransducerNets nets;
    std::vector<double> epoch_loss;  // mean per-utterance NLL
    std::vector<double> first_epoch_batch_loss;
};

class TransducerDiverged : public Error {
public:
    TransducerDiverged(const std::string& message, TransducerNets last_good)
        : Error(ErrorKind::TrainingFailure, message), last_good_(std::move(last_good)) {}
    const TransducerNets& last_good() const { return last_good_; }

private:
    TransducerNets last_good_;
};

/// Fits input normalization on the examples and trains with Adam.
TransducerTrainResult train_transducer(std::span<const TransducerExample> data, const TransducerTrainConfig& cfg,
                                       TransducerNets nets);

Checkpoint transducer_to_checkpoint(const TransducerNets& nets);
TransducerNets transducer_from_checkpoint(const Checkpoint& ck);
void save_transducer(const std::filesystem::path& path, const TransducerNets& nets);
TransducerNets load_transducer(const std::filesystem::path& path);

// Hypotheses as JSON lines: {"id": ..., "tokens": [...], "score": ...}.
std::string hypothesis_line(const TransducerArch& arch, const Hypothesis& h);
void write_hypotheses(const std::filesystem::path& path, const TransducerArch& arch, const std::vector<Hypothesis>& hyps);

struct HypothesisRecord {
    std::string utterance_id;
    std::vector<std::string> tokens;
    double score = 0.0;
};
std::vector<HypothesisRecord> read_hypotheses(const std::filesystem::path& path);

} // namespace stuttergate
