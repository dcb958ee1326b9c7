#pragma once

#include "stuttergate/features.h"
#include "stuttergate/posterior.h"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace stuttergate {

enum class GateMode { Skip, Flag, SkipAndFlag };

std::string_view gate_mode_name(GateMode mode);
GateMode gate_mode_from_name(std::string_view name);

struct GateConfig {
    GateMode mode = GateMode::Skip;
    /// Flag field carries the raw posterior instead of the 0/1 decision.
    bool flag_carries_posterior = false;
};

struct GatedItem {
    std::vector<double> features;
    std::uint8_t stutter_flag = 0;
    double posterior = 0.0;
    std::size_t original_index = 0;
};

struct GatedStream {
    std::vector<GatedItem> items;
    GateMode mode = GateMode::Skip;
    std::size_t drop_count = 0;
    std::size_t source_length = 0;
    std::vector<std::string> warnings;

    std::size_t size() const { return items.size(); }
    bool empty() const { return items.empty(); }
    std::size_t feature_dim() const { return items.empty() ? 0 : items.front().features.size(); }
    FeatureMatrix as_matrix() const;
};

/// Skip drops decision-1 rows. Flag keeps every row and appends one field with
/// the classifier prediction. SkipAndFlag does both.
GatedStream gate(const FeatureMatrix& features, std::span<const std::uint8_t> decisions,
                 std::span<const double> posteriors, const GateConfig& cfg = {});

GatedStream gate(const FeatureMatrix& features, const PosteriorTrack& track, const GateConfig& cfg = {});

/// Re-gates an already gated stream (Skip modes only); original indices and
/// the running drop count are carried over.
GatedStream regate(const GatedStream& stream, const GateConfig& cfg = {});

// Serialization: SGFT feature file plus a CSV sidecar with
// original_index,flag,posterior rows.
void write_gated_stream(const std::filesystem::path& features_path, const std::filesystem::path& index_path,
                        const GatedStream& stream);
GatedStream read_gated_stream(const std::filesystem::path& features_path, const std::filesystem::path& index_path);

} // namespace stuttergate
