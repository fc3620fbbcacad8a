#include <gtest/gtest.h>

#include <cmath>

#include "crisp/error.hpp"
#include "crisp/masking.hpp"
#include "crisp/retrieval.hpp"
#include "../oracles/oracles.hpp"
#include "support.hpp"

using namespace crisp;
using namespace crisp::retrieval;

namespace {

constexpr int kC = 6;
constexpr int kH = 4;
constexpr int kW = 3;
constexpr int kCells = kH * kW;

index::FeatureIndex make_index(const std::vector<oracle::Entry>& entries) {
    index::IndexHeader h;
    h.channels = kC;
    h.grid_height = kH;
    h.grid_width = kW;
    index::FeatureIndex idx(h);
    for (const auto& e : entries) idx.add(e.instance_id, e.model_id, e.features);
    return idx;
}

std::vector<oracle::Entry> random_entries(Rng& rng, int models, int max_instances) {
    std::vector<oracle::Entry> out;
    for (int m = 0; m < models; ++m) {
        const int n = rng.uniform_int(1, max_instances);
        for (int i = 0; i < n; ++i)
            out.push_back({"m" + std::to_string(m) + "_" + std::to_string(i), "M" + std::to_string(m),
                           test::random_floats(rng, kC * kCells)});
    }
    return out;
}

masking::CellMask random_cells(Rng& rng) {
    masking::CellMask m{kH, kW, std::vector<std::uint8_t>(kCells, 0)};
    while (m.count() == 0)
        for (auto& c : m.cells) c = rng.bernoulli(0.5) ? 1 : 0;
    return m;
}

std::vector<double> random_query(Rng& rng, const masking::CellMask& cells) {
    return masking::mask_features(test::random_floats(rng, kC * kCells), kC, cells);
}

std::vector<std::string> models_of(const RankedResult& r) {
    std::vector<std::string> out;
    for (const auto& item : r.results) out.push_back(item.model_id);
    return out;
}

}  // namespace

TEST(Retrieval, MatchesBruteForceOracle) {
    Rng rng(42);
    for (int trial = 0; trial < 50; ++trial) {
        const auto entries = random_entries(rng, rng.uniform_int(1, 40), 4);
        const auto idx = make_index(entries);
        const auto cells = random_cells(rng);
        const auto q = random_query(rng, cells);
        const int k = rng.uniform_int(1, 50);

        const auto got = rank_models(idx, score_entries(idx, cells, q), k, "q");
        const auto want = oracle::rank(entries, q, kC, kCells, cells.indices(), k);
        ASSERT_EQ(got.results.size(), want.size());
        for (std::size_t i = 0; i < want.size(); ++i) {
            EXPECT_EQ(got.results[i].model_id, want[i].model_id) << trial << ":" << i;
            EXPECT_EQ(got.results[i].best_instance_id, want[i].best_instance_id);
            EXPECT_NEAR(got.results[i].score, want[i].score, 1e-9);
        }
    }
}

TEST(Retrieval, SelfMatchScoresOne) {
    Rng rng(1);
    const auto entries = random_entries(rng, 10, 2);
    const auto idx = make_index(entries);
    const auto cells = random_cells(rng);
    const auto q = masking::mask_features(entries[7].features, kC, cells);
    const auto r = rank_models(idx, score_entries(idx, cells, q), 3, "q");
    EXPECT_EQ(r.results[0].best_instance_id, entries[7].instance_id);
    EXPECT_NEAR(r.results[0].score, 1.0, 1e-9);
}

TEST(Retrieval, OutOfMaskValuesAreIgnored) {
    Rng rng(2);
    auto entries = random_entries(rng, 12, 3);
    const auto cells = random_cells(rng);
    const auto q = random_query(rng, cells);
    const auto before = score_entries(make_index(entries), cells, q);
    for (auto& e : entries)
        for (int c = 0; c < kC; ++c)
            for (int cell = 0; cell < kCells; ++cell)
                if (!cells.cells[cell]) e.features[c * kCells + cell] = static_cast<float>(rng.uniform(-50, 50));
    EXPECT_EQ(score_entries(make_index(entries), cells, q), before);
}

TEST(Retrieval, MaxAggregationExample) {
    // Per-instance scores A#1 0.9, A#2 0.5, B#1 0.8.
    index::IndexHeader h;
    h.channels = 1;
    h.grid_height = 1;
    h.grid_width = 1;
    index::FeatureIndex idx(h);
    for (const char* id : {"A#1", "A#2", "B#1"}) idx.add(id, std::string(1, id[0]), std::vector<float>{1.0f});
    const std::vector<double> scores{0.9, 0.5, 0.8};
    const auto r = rank_models(idx, scores, 10, "q");
    ASSERT_EQ(r.results.size(), 2u);
    EXPECT_EQ(r.results[0], (RankedItem{"A", "A#1", 0.9}));
    EXPECT_EQ(r.results[1], (RankedItem{"B", "B#1", 0.8}));
}

TEST(Retrieval, TiesBreakByIdentifier) {
    index::IndexHeader h;
    h.channels = 1;
    h.grid_height = 1;
    h.grid_width = 1;
    index::FeatureIndex idx(h);
    idx.add("z2", "Z", std::vector<float>{1.0f});
    idx.add("z1", "Z", std::vector<float>{1.0f});
    idx.add("a9", "A", std::vector<float>{1.0f});
    const auto r = rank_models(idx, std::vector<double>{0.5, 0.5, 0.5}, 10, "q");
    EXPECT_EQ(models_of(r), (std::vector<std::string>{"A", "Z"}));
    EXPECT_EQ(r.results[1].best_instance_id, "z1");
}

TEST(Retrieval, SmallerKIsPrefix) {
    Rng rng(3);
    const auto entries = random_entries(rng, 30, 3);
    const auto idx = make_index(entries);
    const auto cells = random_cells(rng);
    const auto scores = score_entries(idx, cells, random_query(rng, cells));
    const auto full = rank_models(idx, scores, 100, "q");
    EXPECT_EQ(full.results.size(), 30u);
    for (int k = 1; k <= 30; ++k) {
        const auto r = rank_models(idx, scores, k, "q");
        ASSERT_EQ(r.results.size(), static_cast<std::size_t>(k));
        for (int i = 0; i < k; ++i) EXPECT_EQ(r.results[i], full.results[i]);
    }
    EXPECT_THROW(rank_models(idx, scores, 0, "q"), Error);
}

TEST(Retrieval, PositiveScalingLeavesScores) {
    Rng rng(4);
    auto entries = random_entries(rng, 8, 2);
    const auto cells = random_cells(rng);
    const auto q = random_query(rng, cells);
    const auto before = score_entries(make_index(entries), cells, q);
    for (auto& e : entries)
        for (auto& v : e.features) v *= 4.0f;
    const auto after = score_entries(make_index(entries), cells, q);
    for (std::size_t i = 0; i < before.size(); ++i) EXPECT_NEAR(after[i], before[i], 1e-9);
}

TEST(Retrieval, FullMaskIsPlainCosine) {
    Rng rng(5);
    const auto entries = random_entries(rng, 5, 1);
    const auto cells = masking::CellMask::full(kH, kW);
    const auto q = random_query(rng, cells);
    const auto scores = score_entries(make_index(entries), cells, q);
    for (std::size_t i = 0; i < entries.size(); ++i) {
        double dot = 0, na = 0, nb = 0;
        for (int j = 0; j < kC * kCells; ++j) {
            dot += entries[i].features[j] * q[j];
            na += static_cast<double>(entries[i].features[j]) * entries[i].features[j];
            nb += q[j] * q[j];
        }
        EXPECT_NEAR(scores[i], dot / std::sqrt(na * nb), 1e-9);
    }
}

TEST(Retrieval, ZeroMaskedEntryScoresZero) {
    index::IndexHeader h;
    h.channels = 1;
    h.grid_height = 1;
    h.grid_width = 2;
    index::FeatureIndex idx(h);
    idx.add("a", "A", std::vector<float>{0.0f, 3.0f});
    const masking::CellMask cells{1, 2, {1, 0}};
    EXPECT_EQ(score_entries(idx, cells, std::vector<double>{1.0, 0.0})[0], 0.0);
}

TEST(Retrieval, ShapeChecks) {
    Rng rng(6);
    const auto idx = make_index(random_entries(rng, 3, 1));
    EXPECT_THROW(score_entries(idx, masking::CellMask::full(kH, kW), std::vector<double>(5, 0.1)), Error);
    EXPECT_THROW(score_entries(idx, masking::CellMask::full(2, 2), std::vector<double>(kC * kCells, 0.1)), Error);
}

TEST(Retrieval, JsonText) {
    RankedResult r{"q\"1", 2, {{"M1", "i1", 0.5}, {"M2", "i2", -1e-9}}};
    EXPECT_EQ(to_json_text(r),
              "{\"query_id\":\"q\\\"1\",\"k\":2,\"results\":[{\"model_id\":\"M1\",\"best_instance_id\":\"i1\","
              "\"score\":0.500000},{\"model_id\":\"M2\",\"best_instance_id\":\"i2\",\"score\":0.000000}]}");
    EXPECT_EQ(to_json(r)["results"][0]["model_id"], "M1");
}

namespace {

struct EncodedFixture {
    encoder::Encoder enc{test::tiny_encoder()};
    index::FeatureIndex idx;
    std::vector<Image> prints;

    EncodedFixture() {
        enc.initialize(5);
        index::IndexHeader h;
        h.channels = 8;
        h.grid_height = 8;
        h.grid_width = 4;
        idx = index::FeatureIndex(h);
        Rng rng(8);
        for (int i = 0; i < 6; ++i) {
            prints.push_back(test::random_image(rng, 64, 32));
            idx.add("i" + std::to_string(i), "M" + std::to_string(i / 2), enc.encode(prints.back(), encoder::Channel::Depth));
        }
    }
};

}  // namespace

TEST(BatchQuery, SingleSpecMatchesQuery) {
    EncodedFixture f;
    const QuerySpec spec{"q0", f.prints[0], VisibilityMask::rectangle(64, 32, 0, 8, 32, 40), 3};
    const auto out = batch_query(f.idx, f.enc, std::span<const QuerySpec>(&spec, 1));
    ASSERT_EQ(out.size(), 1u);
    ASSERT_TRUE(out[0].result.has_value());
    EXPECT_EQ(*out[0].result, query(f.idx, f.enc, spec));
}

TEST(BatchQuery, FailuresAreRecordedAndOrderFollowsInput) {
    EncodedFixture f;
    std::vector<QuerySpec> specs{{"a", f.prints[1], VisibilityMask::full(64, 32), 2},
                                 {"bad", f.prints[2], VisibilityMask(64, 32), 2},
                                 {"c", f.prints[3], VisibilityMask::rectangle(64, 32, 0, 0, 16, 64), 2}};
    const auto out = batch_query(f.idx, f.enc, specs);
    ASSERT_EQ(out.size(), 3u);
    EXPECT_TRUE(out[0].result && !out[0].error);
    ASSERT_TRUE(out[1].error.has_value());
    EXPECT_EQ(out[1].error->code, ErrorCode::EmptyMask);
    EXPECT_TRUE(out[2].result.has_value());

    std::vector<QuerySpec> reversed(specs.rbegin(), specs.rend());
    const auto back = batch_query(f.idx, f.enc, reversed);
    EXPECT_EQ(back[0].query_id, "c");
    EXPECT_EQ(*back[0].result, *out[2].result);
    EXPECT_EQ(*back[2].result, *out[0].result);
}

TEST(Query, FeatureMaskingSwitchChangesScoringCells) {
    EncodedFixture f;
    const auto mask = VisibilityMask::rectangle(64, 32, 0, 0, 32, 16);
    const auto on = encode_query(f.enc, f.prints[0], mask);
    const auto off = encode_query(f.enc, f.prints[0], mask, {false, true});
    EXPECT_EQ(on.cells.count(), 8u);
    EXPECT_EQ(off.cells.count(), 32u);
    EXPECT_THROW(encode_query(f.enc, f.prints[0], VisibilityMask(64, 32), {false, true}), Error);
}
