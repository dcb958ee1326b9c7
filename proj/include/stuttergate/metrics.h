#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace stuttergate {

struct WerReport {
    std::size_t substitutions = 0;
    std::size_t deletions = 0;
    std::size_t insertions = 0;
    std::size_t n_ref_tokens = 0;

    std::size_t errors() const { return substitutions + deletions + insertions; }
    double wer() const { return static_cast<double>(errors()) / static_cast<double>(n_ref_tokens); }

    WerReport& operator+=(const WerReport& o) {
        substitutions += o.substitutions;
        deletions += o.deletions;
        insertions += o.insertions;
        n_ref_tokens += o.n_ref_tokens;
        return *this;
    }
};

/// Whitespace split, lower-cased, ASCII punctuation removed.
std::vector<std::string> tokenize(std::string_view text);

/// Unit-cost Levenshtein alignment. Among minimal alignments the backtrace
/// prefers substitution, then insertion, then deletion.
WerReport wer(std::span<const std::string> ref, std::span<const std::string> hyp);

std::size_t edit_distance(std::span<const std::string> a, std::span<const std::string> b);

struct WerrReport {
    double baseline_wer = 0.0;
    double model_wer = 0.0;
    /// 100 * (b - m) / b; positive means the model improved on the baseline.
    double werr_reduction = 0.0;
};

WerrReport werr(double baseline_wer, double model_wer);

struct PrPoint {
    double threshold = 0.0;
    double precision = 0.0;
    double recall = 0.0;
};

struct PrCurve {
    std::vector<PrPoint> points;  // ascending threshold
    double pr_auc = 0.0;
};

/// Step-wise average precision, sum (R_i - R_{i-1}) P_i over descending
/// posterior thresholds; tied posteriors form one threshold.
PrCurve pr_auc(std::span<const double> posteriors, std::span<const std::uint8_t> labels);

} // namespace stuttergate
