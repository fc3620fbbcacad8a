#include <gtest/gtest.h>

#include <fstream>

#include "crisp/config.hpp"
#include "crisp/dataset.hpp"
#include "crisp/error.hpp"
#include "crisp/query_set.hpp"
#include "crisp/png_io.hpp"
#include "support.hpp"

using namespace crisp;
using namespace crisp::config;
using nlohmann::json;

namespace {

ErrorCode parse_error(const json& j) {
    try {
        parse_config(j);
    } catch (const Error& e) {
        return e.code();
    }
    ADD_FAILURE() << "accepted " << j.dump();
    return ErrorCode::InvalidArgument;
}

}  // namespace

TEST(Config, EmptyObjectGivesDefaults) {
    const auto c = parse_config(json::object());
    EXPECT_EQ(c.dataset.n_models, 16);
    EXPECT_DOUBLE_EQ(c.training.tau, 0.07);
    EXPECT_DOUBLE_EQ(c.training.learning_rate, 1e-4);
    EXPECT_EQ(c.training.n_models_per_batch, 4);
    EXPECT_EQ(c.retrieval.k, 100);
    EXPECT_EQ(c.encoder.backbone, encoder::Backbone::ReferenceResNetStyle);
    EXPECT_EQ(c.encoder.frame, (dataset::CanonicalFrame{384, 192}));
}

TEST(Config, JsonRoundTrip) {
    auto j = to_json(parse_config(json::object()));
    j["training"]["steps"] = 123;
    j["encoder"]["backbone"] = "small_cnn";
    j["augment"]["p_noise"] = 0.25;
    const auto c = parse_config(j);
    EXPECT_EQ(c.training.steps, 123);
    EXPECT_EQ(c.encoder.backbone, encoder::Backbone::SmallCnn);
    EXPECT_DOUBLE_EQ(c.training.augment.p_noise, 0.25);
    EXPECT_EQ(to_json(c), j);
}

TEST(Config, UnknownKeysAndSections) {
    EXPECT_EQ(parse_error({{"nope", json::object()}}), ErrorCode::InvalidConfig);
    EXPECT_EQ(parse_error({{"training", {{"taux", 0.1}}}}), ErrorCode::InvalidConfig);
    EXPECT_EQ(parse_error({{"augment", {{"field_kind_weights", {{"uniform", 1.0}}}}}}), ErrorCode::InvalidConfig);
}

TEST(Config, WrongTypesAndRanges) {
    EXPECT_EQ(parse_error({{"training", {{"tau", "hot"}}}}), ErrorCode::InvalidConfig);
    EXPECT_EQ(parse_error({{"training", {{"tau", -1.0}}}}), ErrorCode::InvalidConfig);
    EXPECT_EQ(parse_error({{"metrics", {{"k", 0}}}}), ErrorCode::InvalidConfig);
    EXPECT_EQ(parse_error({{"retrieval", {{"database_modality", "sketch"}}}}), ErrorCode::InvalidConfig);
    EXPECT_EQ(parse_error({{"encoder", {{"backbone", "vgg"}}}}), ErrorCode::InvalidConfig);
    EXPECT_EQ(parse_error(json::array()), ErrorCode::InvalidConfig);
}

TEST(Config, SetSeedReachesEverySeed) {
    auto c = parse_config(json::object());
    c.set_seed(77);
    EXPECT_EQ(c.dataset.seed, 77u);
    EXPECT_EQ(c.training.seed, 77u);
}

TEST(Config, LoadFromFile) {
    test::TempDir dir("cfg");
    std::ofstream(dir / "a.json") << R"({"retrieval": {"k": 7}})";
    EXPECT_EQ(load_config(dir / "a.json").retrieval.k, 7);
    std::ofstream(dir / "b.json") << "{ broken";
    EXPECT_THROW(load_config(dir / "b.json"), Error);
    EXPECT_THROW(load_config(dir / "missing.json"), Error);
}

TEST(QuerySet, DeterministicWithLabels) {
    dataset::SyntheticOptions o;
    o.n_models = 3;
    o.frame = {64, 32};
    const auto sources = dataset::generate_synthetic_instances(o);
    query_set::QuerySetOptions q;
    q.count = 10;
    q.seed = 4;
    dataset::GroundTruthMap ta, tb;
    const auto a = query_set::make_queries(sources, q, ta);
    const auto b = query_set::make_queries(sources, q, tb);
    ASSERT_EQ(a.size(), 10u);
    EXPECT_EQ(ta, tb);
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].print, b[i].print);
        EXPECT_EQ(a[i].mask, b[i].mask);
        EXPECT_EQ(ta.at(a[i].query_id), std::set<std::string>{sources[i % sources.size()].model_id});
        const double area = static_cast<double>(a[i].mask.count()) / (64.0 * 32.0);
        EXPECT_GE(area, 0.4 - 0.05);
        for (int y = 0; y < 64; ++y)
            for (int x = 0; x < 32; ++x)
                if (!a[i].mask.at(y, x)) ASSERT_EQ(a[i].print.at(y, x), 0.0f);
    }
}

TEST(QuerySet, PrefixProperty) {
    dataset::SyntheticOptions o;
    o.n_models = 2;
    o.frame = {64, 32};
    const auto sources = dataset::generate_synthetic_instances(o);
    query_set::QuerySetOptions q;
    q.count = 6;
    dataset::GroundTruthMap t;
    const auto long_set = query_set::make_queries(sources, q, t);
    q.count = 3;
    const auto short_set = query_set::make_queries(sources, q, t);
    for (std::size_t i = 0; i < short_set.size(); ++i) EXPECT_EQ(short_set[i].print, long_set[i].print);
}

TEST(QuerySet, WriteAndLoad) {
    test::TempDir dir("qs");
    dataset::SyntheticOptions o;
    o.n_models = 2;
    o.frame = {64, 32};
    const auto manifest = dataset::generate_synthetic(o, dir / "data");
    query_set::QuerySetOptions q;
    q.count = 5;
    const auto records = query_set::write_queries(manifest, q, dir / "q");
    ASSERT_EQ(records.size(), 5u);
    const auto loaded = query_set::load_queries(dir / "q" / "queries.jsonl", 9);
    ASSERT_EQ(loaded.size(), 5u);
    dataset::GroundTruthMap t;
    std::vector<dataset::ShoeInstance> sources;
    for (const auto& e : manifest.entries) sources.push_back(dataset::load_instance(manifest, e));
    const auto made = query_set::make_queries(sources, q, t);
    for (std::size_t i = 0; i < 5; ++i) {
        EXPECT_EQ(loaded[i].query_id, made[i].query_id);
        EXPECT_EQ(loaded[i].k, 9);
        EXPECT_EQ(loaded[i].mask, made[i].mask);
        // 16-bit storage.
        for (std::size_t p = 0; p < made[i].print.size(); ++p)
            ASSERT_NEAR(loaded[i].print.pixels()[p], made[i].print.pixels()[p], 1.0 / 65535.0);
    }
    EXPECT_EQ(dataset::load_ground_truth(dir / "q" / "ground_truth.json"), t);
}
