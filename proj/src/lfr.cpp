#include "stuttergate/lfr.h"

#include "stuttergate/error.h"

#include <cstdio>
#include <cstdlib>

namespace stuttergate {

VotePolicy VotePolicy::ave(double th) {
    if (!(th > 0.0 && th < 1.0)) {
        throw Error(ErrorKind::Domain, "ave_th threshold " + std::to_string(th) + " outside (0, 1)");
    }
    return {VoteKind::AveTh, th};
}

std::string VotePolicy::name() const {
    switch (kind) {
    case VoteKind::Majority: return "majority";
    case VoteKind::Any1: return "any_1";
    case VoteKind::Any0: return "any_0";
    case VoteKind::AveTh: {
        char buf[32];
        std::snprintf(buf, sizeof buf, "ave_%g", threshold);
        return buf;
    }
    }
    return "majority";
}

VotePolicy parse_vote_policy(std::string_view name) {
    if (name == "majority") return VotePolicy::majority();
    if (name == "any_1") return VotePolicy::any1();
    if (name == "any_0") return VotePolicy::any0();
    if (name.starts_with("ave_")) {
        const std::string num(name.substr(4));
        char* end = nullptr;
        const double th = std::strtod(num.c_str(), &end);
        if (!num.empty() && end == num.c_str() + num.size()) return VotePolicy::ave(th);
    }
    throw Error(ErrorKind::Config, "unknown vote policy '" + std::string(name) + "'");
}

std::vector<VotePolicy> default_policy_grid() {
    return {VotePolicy::majority(), VotePolicy::any1(),    VotePolicy::any0(),
            VotePolicy::ave(0.2),   VotePolicy::ave(0.4),  VotePolicy::ave(0.5),
            VotePolicy::ave(0.6),   VotePolicy::ave(0.8),  VotePolicy::ave(0.9)};
}

std::uint8_t vote(std::span<const std::uint8_t, kLfrStack> decisions, std::span<const double, kLfrStack> posteriors,
                  const VotePolicy& policy) {
    for (double p : posteriors) {
        if (!(p >= 0.0 && p <= 1.0)) throw Error(ErrorKind::Domain, "posterior " + std::to_string(p) + " outside [0, 1]");
    }
    std::size_t ones = 0;
    for (auto d : decisions) ones += d ? 1 : 0;
    switch (policy.kind) {
    case VoteKind::Majority: return ones * 2 > kLfrStack ? 1 : 0;
    case VoteKind::Any1: return ones > 0 ? 1 : 0;
    case VoteKind::Any0: return ones == kLfrStack ? 1 : 0;
    case VoteKind::AveTh: {
        const double mean = (posteriors[0] + posteriors[1] + posteriors[2]) / 3.0;
        return mean > policy.threshold ? 1 : 0;
    }
    }
    return 0;
}

std::vector<LfrStack> stack_frames(const PosteriorTrack& track, const FeatureMatrix& features) {
    const std::size_t n = track.size();
    if (n == 0) throw Error(ErrorKind::EmptyInput, "empty posterior track");
    if (features.rows != n || track.decisions.size() != n) {
        throw Error(ErrorKind::Shape, "track has " + std::to_string(n) + " frames, features " +
                                          std::to_string(features.rows));
    }
    std::vector<LfrStack> stacks;
    stacks.reserve((n + kLfrStack - 1) / kLfrStack);
    for (std::size_t s = 0; s * kLfrStack < n; ++s) {
        LfrStack st;
        st.stacked_features.reserve(kLfrStack * features.cols);
        double sum = 0.0;
        for (std::size_t k = 0; k < kLfrStack; ++k) {
            const std::size_t idx = std::min(s * kLfrStack + k, n - 1);
            st.member_indices[k] = idx;
            st.member_decisions[k] = track.decisions[idx];
            st.member_posteriors[k] = track.posteriors[idx];
            sum += track.posteriors[idx];
            const auto row = features.row(idx);
            st.stacked_features.insert(st.stacked_features.end(), row.begin(), row.end());
        }
        st.stack_posterior_mean = sum / static_cast<double>(kLfrStack);
        st.stack_decision = vote(st.member_decisions, st.member_posteriors, VotePolicy::majority());
        stacks.push_back(std::move(st));
    }
    return stacks;
}

FeatureMatrix stack_features(const FeatureMatrix& features) {
    if (features.rows == 0) throw Error(ErrorKind::EmptyInput, "no frames to stack");
    const std::size_t n_stacks = (features.rows + kLfrStack - 1) / kLfrStack;
    FeatureMatrix out(n_stacks, kLfrStack * features.cols);
    out.utterance_id = features.utterance_id;
    for (std::size_t s = 0; s < n_stacks; ++s) {
        auto o = out.row(s);
        for (std::size_t k = 0; k < kLfrStack; ++k) {
            const auto row = features.row(std::min(s * kLfrStack + k, features.rows - 1));
            std::copy(row.begin(), row.end(), o.begin() + static_cast<std::ptrdiff_t>(k * features.cols));
        }
    }
    return out;
}

SweepResult sweep(const PosteriorTrack& track, const FeatureMatrix& features, const std::vector<VotePolicy>& policies,
                  const GateConfig& gate_cfg) {
    if (policies.empty()) throw Error(ErrorKind::Config, "sweep needs at least one policy");
    const auto stacks = stack_frames(track, features);
    FeatureMatrix stacked(stacks.size(), kLfrStack * features.cols);
    std::vector<double> means(stacks.size());
    for (std::size_t s = 0; s < stacks.size(); ++s) {
        std::copy(stacks[s].stacked_features.begin(), stacks[s].stacked_features.end(), stacked.row(s).begin());
        means[s] = stacks[s].stack_posterior_mean;
    }
    SweepResult result;
    for (const auto& policy : policies) {
        SweepRow row;
        row.policy = policy;
        row.n_stacks = stacks.size();
        std::vector<std::uint8_t> decisions(stacks.size());
        for (std::size_t s = 0; s < stacks.size(); ++s) {
            decisions[s] = vote(stacks[s].member_decisions, stacks[s].member_posteriors, policy);
            row.flagged += decisions[s];
        }
        row.stream = gate(stacked, decisions, means, gate_cfg);
        result.rows.push_back(std::move(row));
    }
    return result;
}

} // namespace stuttergate
