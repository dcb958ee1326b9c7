#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace stuttergate {

inline constexpr double kDecisionThreshold = 0.5;

/// Per-100ms-frame stutter posteriors and the binary decisions passed to the
/// decoder. decisions[i] == (posteriors[i] >= 0.5).
struct PosteriorTrack {
    std::string utterance_id;
    std::vector<double> posteriors;
    std::vector<std::uint8_t> decisions;

    std::size_t size() const { return posteriors.size(); }
};

PosteriorTrack make_posterior_track(std::vector<double> posteriors, std::string utterance_id = {});

/// Ground-truth labels as a track: posterior 1.0 for stutter frames, 0.0 otherwise.
PosteriorTrack track_from_labels(std::span<const std::uint8_t> labels, std::string utterance_id = {});

} // namespace stuttergate
