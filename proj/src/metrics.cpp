#include "stuttergate/metrics.h"

#include "stuttergate/error.h"

#include <algorithm>
#include <cctype>
#include <numeric>

namespace stuttergate {

std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : text) {
        const auto u = static_cast<unsigned char>(c);
        if (std::isspace(u)) {
            if (!cur.empty()) out.push_back(std::move(cur));
            cur.clear();
        } else if (!std::ispunct(u)) {
            cur.push_back(static_cast<char>(std::tolower(u)));
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

WerReport wer(std::span<const std::string> ref, std::span<const std::string> hyp) {
    if (ref.empty()) throw Error(ErrorKind::UndefinedMetric, "WER undefined for an empty reference");
    const std::size_t n = ref.size();
    const std::size_t m = hyp.size();
    std::vector<std::size_t> d((n + 1) * (m + 1));
    auto at = [&](std::size_t i, std::size_t j) -> std::size_t& { return d[i * (m + 1) + j]; };
    for (std::size_t i = 0; i <= n; ++i) at(i, 0) = i;
    for (std::size_t j = 0; j <= m; ++j) at(0, j) = j;
    for (std::size_t i = 1; i <= n; ++i) {
        for (std::size_t j = 1; j <= m; ++j) {
            const std::size_t diag = at(i - 1, j - 1) + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
            at(i, j) = std::min({diag, at(i, j - 1) + 1, at(i - 1, j) + 1});
        }
    }
    WerReport r;
    r.n_ref_tokens = n;
    std::size_t i = n;
    std::size_t j = m;
    while (i > 0 || j > 0) {
        if (i > 0 && j > 0) {
            const bool same = ref[i - 1] == hyp[j - 1];
            if (at(i, j) == at(i - 1, j - 1) + (same ? 0 : 1)) {
                if (!same) ++r.substitutions;
                --i;
                --j;
                continue;
            }
        }
        if (j > 0 && at(i, j) == at(i, j - 1) + 1) {
            ++r.insertions;
            --j;
        } else {
            ++r.deletions;
            --i;
        }
    }
    return r;
}

std::size_t edit_distance(std::span<const std::string> a, std::span<const std::string> b) {
    std::vector<std::size_t> prev(b.size() + 1);
    std::vector<std::size_t> cur(b.size() + 1);
    std::iota(prev.begin(), prev.end(), std::size_t{0});
    for (std::size_t i = 1; i <= a.size(); ++i) {
        cur[0] = i;
        for (std::size_t j = 1; j <= b.size(); ++j) {
            cur[j] = std::min({prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1), prev[j] + 1, cur[j - 1] + 1});
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

WerrReport werr(double baseline_wer, double model_wer) {
    if (!(baseline_wer > 0.0)) {
        throw Error(ErrorKind::UndefinedMetric, "WERR undefined for baseline WER " + std::to_string(baseline_wer));
    }
    return {baseline_wer, model_wer, 100.0 * (baseline_wer - model_wer) / baseline_wer};
}

PrCurve pr_auc(std::span<const double> posteriors, std::span<const std::uint8_t> labels) {
    if (posteriors.size() != labels.size()) {
        throw Error(ErrorKind::Shape, "posteriors and labels differ in length");
    }
    const auto n_pos = static_cast<std::size_t>(std::count_if(labels.begin(), labels.end(), [](auto l) { return l != 0; }));
    if (n_pos == 0) throw Error(ErrorKind::UndefinedMetric, "recall undefined: no positive labels");

    std::vector<std::size_t> order(posteriors.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return posteriors[a] > posteriors[b]; });

    PrCurve curve;
    std::size_t tp = 0;
    std::size_t fp = 0;
    double prev_recall = 0.0;
    for (std::size_t i = 0; i < order.size();) {
        const double th = posteriors[order[i]];
        while (i < order.size() && posteriors[order[i]] == th) {
            if (labels[order[i]] != 0) ++tp; else ++fp;
            ++i;
        }
        const double recall = static_cast<double>(tp) / static_cast<double>(n_pos);
        const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
        curve.pr_auc += (recall - prev_recall) * precision;
        prev_recall = recall;
        curve.points.push_back({th, precision, recall});
    }
    std::reverse(curve.points.begin(), curve.points.end());
    return curve;
}

} // namespace stuttergate
