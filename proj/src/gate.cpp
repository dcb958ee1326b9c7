#include "stuttergate/gate.h"

#include "stuttergate/error.h"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace stuttergate {

std::string_view gate_mode_name(GateMode mode) {
    switch (mode) {
    case GateMode::Skip: return "skip";
    case GateMode::Flag: return "flag";
    case GateMode::SkipAndFlag: return "skip_and_flag";
    }
    return "skip";
}

GateMode gate_mode_from_name(std::string_view name) {
    if (name == "skip") return GateMode::Skip;
    if (name == "flag") return GateMode::Flag;
    if (name == "skip_and_flag") return GateMode::SkipAndFlag;
    throw Error(ErrorKind::Config, "unknown gate mode '" + std::string(name) + "'");
}

FeatureMatrix GatedStream::as_matrix() const {
    FeatureMatrix m(items.size(), feature_dim());
    for (std::size_t r = 0; r < items.size(); ++r) {
        std::copy(items[r].features.begin(), items[r].features.end(), m.row(r).begin());
    }
    return m;
}

namespace {

bool skips(GateMode mode) { return mode == GateMode::Skip || mode == GateMode::SkipAndFlag; }
bool flags(GateMode mode) { return mode == GateMode::Flag || mode == GateMode::SkipAndFlag; }

void finish(GatedStream& out) {
    if (out.items.empty() && out.source_length > 0) {
        out.warnings.push_back("all " + std::to_string(out.source_length) + " frames dropped; decoder input is empty");
    }
}

} // namespace

GatedStream gate(const FeatureMatrix& features, std::span<const std::uint8_t> decisions,
                 std::span<const double> posteriors, const GateConfig& cfg) {
    if (features.rows != decisions.size() || decisions.size() != posteriors.size()) {
        throw Error(ErrorKind::Shape, "gate inputs differ in length: features " + std::to_string(features.rows) +
                                          ", decisions " + std::to_string(decisions.size()) + ", posteriors " +
                                          std::to_string(posteriors.size()));
    }
    GatedStream out;
    out.mode = cfg.mode;
    out.source_length = features.rows;
    for (std::size_t i = 0; i < features.rows; ++i) {
        const std::uint8_t flag = decisions[i] ? 1 : 0;
        if (skips(cfg.mode) && flag) {
            ++out.drop_count;
            continue;
        }
        GatedItem item;
        const auto row = features.row(i);
        item.features.assign(row.begin(), row.end());
        if (flags(cfg.mode)) {
            item.features.push_back(cfg.flag_carries_posterior ? posteriors[i] : static_cast<double>(flag));
        }
        item.stutter_flag = flag;
        item.posterior = posteriors[i];
        item.original_index = i;
        out.items.push_back(std::move(item));
    }
    finish(out);
    return out;
}

GatedStream gate(const FeatureMatrix& features, const PosteriorTrack& track, const GateConfig& cfg) {
    return gate(features, track.decisions, track.posteriors, cfg);
}

GatedStream regate(const GatedStream& stream, const GateConfig& cfg) {
    if (!skips(cfg.mode) || !skips(stream.mode)) {
        throw Error(ErrorKind::Config, "regate is defined for skip modes only");
    }
    GatedStream out;
    out.mode = cfg.mode;
    out.source_length = stream.source_length;
    out.drop_count = stream.drop_count;
    for (const auto& item : stream.items) {
        if (item.stutter_flag) {
            ++out.drop_count;
            continue;
        }
        out.items.push_back(item);
    }
    finish(out);
    return out;
}

void write_gated_stream(const std::filesystem::path& features_path, const std::filesystem::path& index_path,
                        const GatedStream& stream) {
    write_feature_file(features_path, stream.as_matrix());
    std::ofstream idx(index_path, std::ios::binary);
    if (!idx) throw Error(ErrorKind::Io, "cannot write " + index_path.string());
    idx << "# mode=" << gate_mode_name(stream.mode) << " drop_count=" << stream.drop_count
        << " source_length=" << stream.source_length << " feature_dim=" << stream.feature_dim() << '\n';
    idx << "original_index,flag,posterior\n";
    char buf[64];
    for (const auto& item : stream.items) {
        std::snprintf(buf, sizeof buf, "%.17g", item.posterior);
        idx << item.original_index << ',' << static_cast<int>(item.stutter_flag) << ',' << buf << '\n';
    }
}

GatedStream read_gated_stream(const std::filesystem::path& features_path, const std::filesystem::path& index_path) {
    const FeatureMatrix m = read_feature_file(features_path);
    std::ifstream idx(index_path);
    if (!idx) throw Error(ErrorKind::Io, "cannot open " + index_path.string());
    GatedStream out;
    std::string line;
    std::getline(idx, line);
    char mode[32] = {};
    std::size_t dim = 0;
    if (std::sscanf(line.c_str(), "# mode=%31s drop_count=%zu source_length=%zu feature_dim=%zu", mode,
                    &out.drop_count, &out.source_length, &dim) != 4) {
        throw Error(ErrorKind::Parse, index_path.string() + ": bad header line");
    }
    out.mode = gate_mode_from_name(mode);
    std::getline(idx, line);
    std::size_t r = 0;
    while (std::getline(idx, line)) {
        if (line.empty()) continue;
        if (r >= m.rows) throw Error(ErrorKind::Shape, "index file has more rows than the feature file");
        GatedItem item;
        int flag = 0;
        if (std::sscanf(line.c_str(), "%zu,%d,%lf", &item.original_index, &flag, &item.posterior) != 3) {
            throw Error(ErrorKind::Parse, index_path.string() + ": bad row '" + line + "'");
        }
        item.stutter_flag = static_cast<std::uint8_t>(flag);
        const auto row = m.row(r++);
        item.features.assign(row.begin(), row.end());
        out.items.push_back(std::move(item));
    }
    if (r != m.rows) throw Error(ErrorKind::Shape, "index file has fewer rows than the feature file");
    return out;
}

} // namespace stuttergate
