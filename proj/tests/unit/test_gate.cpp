#include "doctest.h"
#include "support.h"

#include "stuttergate/gate.h"
#include "stuttergate/random.h"

using namespace stuttergate;
using test_support::error_kind;

namespace {

FeatureMatrix rows_of(std::size_t n, std::size_t dim) {
    FeatureMatrix f(n, dim);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < dim; ++c) f.at(r, c) = r + 0.01 * c;
    return f;
}

std::vector<double> as_posteriors(const std::vector<std::uint8_t>& d) {
    std::vector<double> p(d.size());
    for (std::size_t i = 0; i < d.size(); ++i) p[i] = d[i] ? 0.75 : 0.25;
    return p;
}

} // namespace

TEST_CASE("skip mode") {
    const std::vector<std::uint8_t> d = {0, 1, 0, 1, 1};
    const auto s = gate(rows_of(5, 2), d, as_posteriors(d));
    REQUIRE(s.size() == 2);
    CHECK(s.items[0].original_index == 0);
    CHECK(s.items[1].original_index == 2);
    CHECK(s.drop_count == 3);
    CHECK(s.items[1].features == std::vector<double>{2.0, 2.01});
    CHECK(s.feature_dim() == 2);

    const std::vector<std::uint8_t> none(6, 0);
    const auto id = gate(rows_of(6, 2), none, as_posteriors(none));
    CHECK(id.size() == 6);
    CHECK(id.drop_count == 0);
    CHECK(id.as_matrix().data == rows_of(6, 2).data);

    const std::vector<std::uint8_t> all(4, 1);
    const auto empty = gate(rows_of(4, 2), all, as_posteriors(all));
    CHECK(empty.empty());
    CHECK(empty.drop_count == 4);
    CHECK(empty.warnings.size() == 1);

    CHECK(error_kind([&] { gate(rows_of(4, 2), d, as_posteriors(d)); }) == ErrorKind::Shape);
}

TEST_CASE("flag modes") {
    const std::vector<std::uint8_t> d = {0, 1, 1, 0};
    const auto p = as_posteriors(d);
    const auto flagged = gate(rows_of(4, 3), d, p, {GateMode::Flag});
    REQUIRE(flagged.size() == 4);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(flagged.items[i].features.size() == 4);
        CHECK(flagged.items[i].features.back() == d[i]);
        CHECK(flagged.items[i].stutter_flag == d[i]);
    }
    const auto with_post = gate(rows_of(4, 3), d, p, {GateMode::Flag, true});
    for (std::size_t i = 0; i < 4; ++i) CHECK(with_post.items[i].features.back() == p[i]);

    const auto both = gate(rows_of(4, 3), d, p, {GateMode::SkipAndFlag});
    REQUIRE(both.size() == 2);
    for (const auto& it : both.items) {
        CHECK(it.features.size() == 4);
        CHECK(it.stutter_flag == 0);
        CHECK(it.posterior == 0.25);
    }
    CHECK(gate_mode_from_name(gate_mode_name(GateMode::SkipAndFlag)) == GateMode::SkipAndFlag);
    CHECK(error_kind([] { gate_mode_from_name("drop"); }) == ErrorKind::Config);
}

TEST_CASE("random streams: invariants and reinsertion") {
    Rng rng(51);
    for (int trial = 0; trial < 200; ++trial) {
        const auto n = static_cast<std::size_t>(rng.uniform_int(1, 80));
        std::vector<std::uint8_t> d(n);
        for (auto& v : d) v = rng.uniform() < 0.4;
        const auto feats = rows_of(n, 2);
        const auto s = gate(feats, d, as_posteriors(d));

        std::size_t ones = std::count(d.begin(), d.end(), 1);
        CHECK(s.drop_count == ones);
        CHECK(s.drop_count + s.size() == n);
        for (std::size_t k = 1; k < s.size(); ++k) CHECK(s.items[k].original_index > s.items[k - 1].original_index);
        for (const auto& it : s.items) CHECK(it.stutter_flag == 0);

        // Merge survivors with the dropped indices and compare against 0..n-1.
        std::vector<std::size_t> dropped;
        for (std::size_t i = 0; i < n; ++i)
            if (d[i]) dropped.push_back(i);
        std::vector<std::size_t> merged;
        std::size_t a = 0, b = 0;
        while (a < s.size() || b < dropped.size()) {
            if (b == dropped.size() || (a < s.size() && s.items[a].original_index < dropped[b])) {
                CHECK(s.items[a].features == std::vector<double>(feats.row(s.items[a].original_index).begin(),
                                                                 feats.row(s.items[a].original_index).end()));
                merged.push_back(s.items[a++].original_index);
            } else {
                merged.push_back(dropped[b++]);
            }
        }
        std::vector<std::size_t> expect(n);
        std::iota(expect.begin(), expect.end(), 0);
        CHECK(merged == expect);

        const auto again = regate(s);
        CHECK(again.size() == s.size());
        CHECK(again.drop_count == s.drop_count);

        const auto fl = gate(feats, d, as_posteriors(d), {GateMode::Flag});
        CHECK(fl.size() == n);
        CHECK(fl.feature_dim() == 3);
    }
    const std::vector<std::uint8_t> d = {0, 1};
    CHECK(error_kind([&] { regate(gate(rows_of(2, 1), d, as_posteriors(d), {GateMode::Flag})); }) == ErrorKind::Config);
}

TEST_CASE("gated stream files") {
    const std::vector<std::uint8_t> d = {0, 1, 0, 0, 1, 0};
    const std::vector<double> p = {0.1, 0.9, 0.3, 0.49, 0.5, 0.0};
    test_support::TempDir dir("gated");
    for (auto mode : {GateMode::Skip, GateMode::Flag, GateMode::SkipAndFlag}) {
        const auto s = gate(rows_of(6, 2), d, p, {mode});
        write_gated_stream(dir.path() / "g.sgft", dir.path() / "g.csv", s);
        const auto back = read_gated_stream(dir.path() / "g.sgft", dir.path() / "g.csv");
        REQUIRE(back.size() == s.size());
        for (std::size_t k = 0; k < s.size(); ++k) {
            CHECK(back.items[k].original_index == s.items[k].original_index);
            CHECK(back.items[k].stutter_flag == s.items[k].stutter_flag);
            CHECK(back.items[k].posterior == s.items[k].posterior);
            for (std::size_t c = 0; c < s.items[k].features.size(); ++c)
                CHECK(back.items[k].features[c] == doctest::Approx(s.items[k].features[c]).epsilon(1e-6));
        }
    }
}
