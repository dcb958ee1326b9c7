#pragma once

#include "stuttergate/checkpoint.h"
#include "stuttergate/error.h"
#include "stuttergate/features.h"
#include "stuttergate/posterior.h"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace stuttergate {

enum class Pooling { Flatten, GlobalAverage };

/// conv(1-D over time) -> BN -> ReLU, twice; pooling; fc1 -> ReLU -> BN;
/// fc2 -> sigmoid. Mel bins are the input channels of the first convolution.
struct ClassifierArch {
    std::size_t in_rows = kClassifierRows;
    std::size_t n_mels = 64;
    std::size_t conv1_channels = 32;
    std::size_t conv1_kernel = 5;
    std::size_t conv1_stride = 2;
    std::size_t conv2_channels = 64;
    std::size_t conv2_kernel = 3;
    std::size_t conv2_stride = 2;
    std::size_t fc1_width = 128;
    Pooling pooling = Pooling::Flatten;
    double bn_eps = 1e-5;
    double bn_momentum = 0.1;

    std::size_t conv1_len() const { return (in_rows - conv1_kernel) / conv1_stride + 1; }
    std::size_t conv2_len() const { return (conv1_len() - conv2_kernel) / conv2_stride + 1; }
    std::size_t fc1_inputs() const {
        return pooling == Pooling::Flatten ? conv2_len() * conv2_channels : conv2_channels;
    }
    std::size_t input_size() const { return in_rows * n_mels; }

    void validate() const;
    std::string to_json() const;
    static ClassifierArch from_json(const std::string& text);
    bool operator==(const ClassifierArch&) const = default;
};

enum class Mode { Train, Eval };

struct TrainState {
    ClassifierArch arch;
    TensorSet params;   // conv1.weight [C1, K1*M], conv1.bias, bn1.gamma, bn1.beta, ...
    TensorSet buffers;  // bn*.running_mean / running_var
    TensorSet adam_m;
    TensorSet adam_v;
    std::uint64_t step = 0;
    std::uint64_t epoch = 0;
    std::uint64_t seed = 0;
};

/// Fresh parameters: He-normal weights, zero biases, unit BN scale.
TrainState init_classifier(const ClassifierArch& arch, std::uint64_t seed);

/// Sets every weight and bias to zero (BN scales stay at 1).
void zero_classifier_weights(TrainState& state);

Checkpoint to_checkpoint(const TrainState& state);
TrainState classifier_from_checkpoint(const Checkpoint& ck);
void save_classifier(const std::filesystem::path& path, const TrainState& state);
TrainState load_classifier(const std::filesystem::path& path);

/// Posterior in (0, 1) for one [in_rows x n_mels] feature window.
double forward(const TrainState& state, std::span<const double> features, Mode mode = Mode::Eval);
double forward(const TrainState& state, const FeatureMatrix& features, Mode mode = Mode::Eval);

/// Eval-mode posteriors for a batch of windows.
std::vector<double> forward_batch(const TrainState& state, std::span<const std::span<const double>> windows);

struct ClassifierExample {
    std::span<const double> features;
    double label = 0.0;  // usually 0/1; soft labels in [0, 1] are accepted
};

struct ClassifierTrainConfig {
    std::size_t epochs = 6;
    std::size_t batch_size = 32;
    AdamConfig adam{};
    std::uint64_t seed = 1;
    /// <= 0 selects inverse class frequency (n_neg / n_pos).
    double pos_weight = 0.0;
};

struct EpochMetrics {
    std::size_t epoch = 0;
    double loss = 0.0;
    double pr_auc = 0.0;
};

struct ClassifierTrainResult {
    TrainState state;
    std::vector<EpochMetrics> history;
    double pos_weight = 1.0;
};

/// Thrown when the loss turns non-finite; carries the state after the last
/// completed epoch.
class ClassifierDiverged : public Error {
public:
    ClassifierDiverged(const std::string& message, TrainState last_good)
        : Error(ErrorKind::TrainingFailure, message), last_good_(std::move(last_good)) {}
    const TrainState& last_good() const { return last_good_; }

private:
    TrainState last_good_;
};

ClassifierTrainResult train_classifier(std::span<const ClassifierExample> data, const ClassifierTrainConfig& cfg,
                                       const ClassifierArch& arch = {});

/// Continues training from an existing state for cfg.epochs more epochs.
ClassifierTrainResult train_classifier(std::span<const ClassifierExample> data, const ClassifierTrainConfig& cfg,
                                       TrainState state);

/// Weighted binary cross-entropy of one window (eval-mode forward) and its
/// gradient with respect to every parameter.
double classifier_loss(const TrainState& state, std::span<const double> features, double label, double pos_weight,
                       TensorSet* grads);

struct GradCheckResult {
    double max_rel_error = 0.0;
    double max_abs_error = 0.0;
    std::size_t checked = 0;
    std::size_t skipped_kinks = 0;
};

/// Analytic gradient vs central differences with eval-mode BN. Coordinates
/// whose perturbation flips a ReLU are skipped. Relative error uses
/// max(|a|, |n|, 1e-4) as denominator.
GradCheckResult grad_check(const TrainState& state, std::span<const double> features, double label, double h = 1e-4,
                           double pos_weight = 1.0);

void write_history_csv(const std::filesystem::path& path, const std::vector<EpochMetrics>& history);
std::vector<EpochMetrics> read_history_csv(const std::filesystem::path& path);

PosteriorTrack predict_track(const ClassifierFeatureBank& bank, const TrainState& state);
PosteriorTrack predict_track(const AudioBuffer& audio, const TrainState& state, const MelConfig& mel = {},
                             const std::string& utterance_id = {});

} // namespace stuttergate
