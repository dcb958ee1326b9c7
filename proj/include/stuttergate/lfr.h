#pragma once

#include "stuttergate/features.h"
#include "stuttergate/gate.h"
#include "stuttergate/posterior.h"

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace stuttergate {

inline constexpr std::size_t kLfrStack = 3;

enum class VoteKind { Majority, Any1, Any0, AveTh };

struct VotePolicy {
    VoteKind kind = VoteKind::Majority;
    double threshold = 0.5;  // AveTh only, in (0, 1)

    static VotePolicy majority() { return {VoteKind::Majority, 0.5}; }
    static VotePolicy any1() { return {VoteKind::Any1, 0.5}; }
    static VotePolicy any0() { return {VoteKind::Any0, 0.5}; }
    static VotePolicy ave(double th);

    std::string name() const;
    bool operator==(const VotePolicy&) const = default;
};

VotePolicy parse_vote_policy(std::string_view name);

/// majority, any_1, any_0, ave_0.2, ave_0.4, ave_0.5, ave_0.6, ave_0.8, ave_0.9
std::vector<VotePolicy> default_policy_grid();

struct LfrStack {
    std::array<std::size_t, kLfrStack> member_indices{};
    std::array<std::uint8_t, kLfrStack> member_decisions{};
    std::array<double, kLfrStack> member_posteriors{};
    std::vector<double> stacked_features;
    std::uint8_t stack_decision = 0;
    double stack_posterior_mean = 0.0;
};

/// ceil(n/3) stacks of consecutive frames; a short final stack repeats the
/// last frame. stack_decision is filled with the majority vote.
std::vector<LfrStack> stack_frames(const PosteriorTrack& track, const FeatureMatrix& features);

/// Stack-level features only (no track), used on the clean training path.
FeatureMatrix stack_features(const FeatureMatrix& features);

std::uint8_t vote(std::span<const std::uint8_t, kLfrStack> decisions, std::span<const double, kLfrStack> posteriors,
                  const VotePolicy& policy);

struct SweepRow {
    VotePolicy policy;
    std::size_t n_stacks = 0;
    std::size_t flagged = 0;
    GatedStream stream;

    double flagged_rate() const { return n_stacks ? static_cast<double>(flagged) / n_stacks : 0.0; }
};

struct SweepResult {
    std::vector<SweepRow> rows;  // in policy order
};

SweepResult sweep(const PosteriorTrack& track, const FeatureMatrix& features, const std::vector<VotePolicy>& policies,
                  const GateConfig& gate_cfg = {});

} // namespace stuttergate
