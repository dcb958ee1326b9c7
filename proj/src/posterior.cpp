#include "stuttergate/posterior.h"

#include "stuttergate/error.h"

#include <cmath>

namespace stuttergate {

PosteriorTrack make_posterior_track(std::vector<double> posteriors, std::string utterance_id) {
    PosteriorTrack t;
    t.utterance_id = std::move(utterance_id);
    t.decisions.reserve(posteriors.size());
    for (double p : posteriors) {
        if (!(p >= 0.0 && p <= 1.0)) throw Error(ErrorKind::Domain, "posterior " + std::to_string(p) + " outside [0, 1]");
        t.decisions.push_back(p >= kDecisionThreshold ? 1 : 0);
    }
    t.posteriors = std::move(posteriors);
    return t;
}

PosteriorTrack track_from_labels(std::span<const std::uint8_t> labels, std::string utterance_id) {
    std::vector<double> p;
    p.reserve(labels.size());
    for (auto l : labels) p.push_back(l ? 1.0 : 0.0);
    return make_posterior_track(std::move(p), std::move(utterance_id));
}

} // namespace stuttergate
