#include <gtest/gtest.h>

#include <fstream>
#include <iterator>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "crisp/dataset.hpp"
#include "crisp/index.hpp"
#include "crisp/png_io.hpp"
#include "crisp/retrieval.hpp"
#include "crisp/service.hpp"
#include "support.hpp"

using namespace crisp;
using namespace crisp::service;
using nlohmann::json;

namespace {

std::string slurp(const std::filesystem::path& p) {
    std::ifstream f(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

VisibilityMask mask_of(const std::vector<Point>& poly, int h = 64, int w = 32) {
    return rasterize_polygon(poly, h, w);
}

// Synthetic database of 16 models x 2 instances on a 64x32 frame.
class ServiceFixture : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        dir_ = new test::TempDir("service");
        dataset::SyntheticOptions o;
        o.frame = {64, 32};
        o.seed = 2;
        manifest_ = new dataset::DatasetManifest(dataset::generate_synthetic(o, dir_->path()));
        auto enc = std::make_shared<encoder::Encoder>(test::tiny_encoder());
        enc->initialize(4);
        encoder_ = enc;
        index_ = std::make_shared<const index::FeatureIndex>(index::build_index(*manifest_, *enc));
    }
    static void TearDownTestSuite() {
        index_.reset();
        encoder_.reset();
        delete manifest_;
        delete dir_;
    }

    Service make(bool loaded = true) const {
        return Service(config::ServiceSection{}, {}, 5, loaded ? index_ : nullptr, loaded ? encoder_ : nullptr,
                       *manifest_);
    }

    static std::string print_png(std::size_t entry) {
        return slurp(manifest_->resolve(manifest_->entries[entry].print_path));
    }

    static test::TempDir* dir_;
    static dataset::DatasetManifest* manifest_;
    static std::shared_ptr<const encoder::Encoder> encoder_;
    static std::shared_ptr<const index::FeatureIndex> index_;
};

test::TempDir* ServiceFixture::dir_ = nullptr;
dataset::DatasetManifest* ServiceFixture::manifest_ = nullptr;
std::shared_ptr<const encoder::Encoder> ServiceFixture::encoder_;
std::shared_ptr<const index::FeatureIndex> ServiceFixture::index_;

}  // namespace

TEST(Polygon, AxisAlignedSquare) {
    const auto m = mask_of({{2, 3}, {10, 3}, {10, 9}, {2, 9}});
    EXPECT_EQ(m, VisibilityMask::rectangle(64, 32, 2, 3, 8, 6));
}

TEST(Polygon, TriangleCoversHalfItsBox) {
    const auto m = mask_of({{0, 0}, {32, 0}, {0, 64}});
    EXPECT_NEAR(static_cast<double>(m.count()), 32.0 * 64.0 / 2.0, 40.0);
    EXPECT_TRUE(m.at(0, 0));
    EXPECT_FALSE(m.at(63, 31));
}

TEST(Polygon, DegenerateInputsAreRejected) {
    EXPECT_THROW(mask_of({{0, 0}, {5, 5}}), Error);
    EXPECT_THROW(mask_of({{0, 0}, {5, 5}, {10, 10}}), Error);
    // Bow tie.
    EXPECT_THROW(mask_of({{0, 0}, {10, 10}, {10, 0}, {0, 10}}), Error);
}

TEST(MaskJson, Forms) {
    const dataset::CanonicalFrame f{64, 32};
    EXPECT_EQ(mask_from_json(json(), f), VisibilityMask::full(64, 32));
    EXPECT_EQ(mask_from_json(json{{"rect", {1, 2, 3, 4}}}, f), VisibilityMask::rectangle(64, 32, 1, 2, 3, 4));
    EXPECT_EQ(mask_from_json(json{{"polygon", {{2, 3}, {10, 3}, {10, 9}, {2, 9}}}}, f),
              VisibilityMask::rectangle(64, 32, 2, 3, 8, 6));
    EXPECT_THROW(mask_from_json(json{{"rect", {1, 2, 0, 4}}}, f), Error);
    EXPECT_THROW(mask_from_json(json{{"circle", 3}}, f), Error);
}

TEST(Transform, IdentityKeepsCanonicalUpload) {
    Rng rng(3);
    const Image img = test::random_image(rng, 64, 32);
    const auto out = apply_transform(img, {}, {64, 32});
    for (std::size_t i = 0; i < img.size(); ++i) ASSERT_NEAR(out.pixels()[i], img.pixels()[i], 1e-6);
}

TEST(Transform, TranslationShiftsContent) {
    Image img(64, 32);
    img.at(10, 10) = 1.0f;
    const auto out = apply_transform(img, {3.0, -2.0, 0.0, 1.0}, {64, 32});
    EXPECT_NEAR(out.at(8, 13), 1.0f, 1e-6);
    EXPECT_NEAR(out.at(10, 10), 0.0f, 1e-6);
}

TEST(Transform, JsonValidation) {
    EXPECT_EQ(transform_from_json(json()), AlignmentTransform{});
    EXPECT_EQ(transform_from_json(json{{"tx", 1.5}, {"scale", 2}}), (AlignmentTransform{1.5, 0.0, 0.0, 2.0}));
    EXPECT_THROW(transform_from_json(json{{"scale", 0}}), Error);
    EXPECT_THROW(transform_from_json(json{{"tx", "left"}}), Error);
    EXPECT_THROW(transform_from_json(json{{"skew", 1}}), Error);
}

TEST_F(ServiceFixture, KOutOfRangeIs400) {
    auto svc = make();
    for (int k : {0, 501}) {
        const auto r = svc.post_query({print_png(0), json(), k, std::nullopt, false});
        EXPECT_EQ(r.status, 400);
        EXPECT_EQ(json::parse(r.body)["error"]["code"], "InvalidArgument");
    }
}

TEST_F(ServiceFixture, NoIndexIs503) {
    auto svc = make(false);
    EXPECT_EQ(svc.post_query({print_png(0), json(), 5, std::nullopt, false}).status, 503);
    EXPECT_EQ(json::parse(svc.health().body)["status"], "unavailable");
}

TEST_F(ServiceFixture, BadInputsAre400) {
    auto svc = make();
    EXPECT_EQ(svc.post_query({"not a png", json(), 5, std::nullopt, false}).status, 400);
    EXPECT_EQ(svc.post_query({print_png(0), json{{"polygon", {{0, 0}, {5, 5}}}}, 5, std::nullopt, false}).status,
              400);
    // Smaller than one feature cell.
    const auto tiny = svc.post_query({print_png(0), json{{"rect", {0, 0, 2, 2}}}, 5, std::nullopt, false});
    EXPECT_EQ(tiny.status, 400);
    EXPECT_EQ(json::parse(tiny.body)["error"]["code"], "EmptyMask");
}

TEST_F(ServiceFixture, SelfRetrievalComesFirst) {
    // Print uploads against an index of prints contain an exact self match.
    index::BuildOptions opts;
    opts.modality = training::Modality::Print;
    auto prints = std::make_shared<const index::FeatureIndex>(index::build_index(*manifest_, *encoder_, opts));
    Service svc(config::ServiceSection{}, {}, 5, prints, encoder_, *manifest_);
    const auto r = svc.post_query({print_png(6), json(), 5, std::nullopt, false});
    ASSERT_EQ(r.status, 200) << r.body;
    const auto self = json::parse(r.body);
    EXPECT_EQ(self["results"][0]["best_instance_id"], manifest_->entries[6].instance_id);
    EXPECT_NEAR(self["results"][0]["score"].get<double>(), 1.0, 1e-5);
}

TEST_F(ServiceFixture, MatchesLibraryQuery) {
    auto svc = make();
    const json mask{{"rect", {0, 8, 32, 40}}};
    const auto r = svc.post_query({print_png(3), mask, 4, std::nullopt, false});
    ASSERT_EQ(r.status, 200) << r.body;
    auto got = json::parse(r.body);
    EXPECT_TRUE(got.contains("timing_ms"));
    got.erase("timing_ms");

    retrieval::QuerySpec spec{got["query_id"], decode_png(print_png(3)), VisibilityMask::rectangle(64, 32, 0, 8, 32, 40),
                              4};
    EXPECT_EQ(got, retrieval::to_json(retrieval::query(*index_, *encoder_, spec)));
}

TEST_F(ServiceFixture, CachedResultAndMask) {
    auto svc = make();
    const json mask{{"rect", {0, 0, 16, 32}}};
    const auto r = svc.post_query({print_png(1), mask, 3, std::nullopt, false});
    ASSERT_EQ(r.status, 200);
    const std::string id = json::parse(r.body)["query_id"];
    EXPECT_EQ(id.size(), 16u);
    EXPECT_EQ(svc.get_query(id).body, r.body);
    const auto png = svc.get_query_mask(id);
    EXPECT_EQ(png.content_type, "image/png");
    EXPECT_EQ(VisibilityMask::from_image(decode_png(png.body)), VisibilityMask::rectangle(64, 32, 0, 0, 16, 32));
    EXPECT_EQ(svc.get_query("0000000000000000").status, 404);
    // Same inputs give the same id.
    EXPECT_EQ(json::parse(svc.post_query({print_png(1), mask, 3, std::nullopt, false}).body)["query_id"], id);
}

TEST_F(ServiceFixture, DryRunCountsCells) {
    auto svc = make();
    const auto r = svc.post_query({print_png(0), json{{"rect", {0, 0, 16, 32}}}, 5, std::nullopt, true});
    ASSERT_EQ(r.status, 200);
    const auto j = json::parse(r.body);
    EXPECT_EQ(j["covered_cells"], 8);
    EXPECT_EQ(j["total_cells"], 32);
    EXPECT_EQ(j["mask_pixels"], 16 * 32);
}

TEST_F(ServiceFixture, EchoMaskMatchesRasterizer) {
    auto svc = make();
    const json poly{{"polygon", {{1.5, 2.0}, {30.0, 5.5}, {20.0, 60.0}, {3.0, 40.0}}}};
    const auto r = svc.echo_mask(poly);
    ASSERT_EQ(r.status, 200);
    EXPECT_EQ(VisibilityMask::from_image(decode_png(r.body)), mask_from_json(poly, {64, 32}));
}

TEST_F(ServiceFixture, HealthModelAndImages) {
    auto svc = make();
    const auto h = json::parse(svc.health().body);
    EXPECT_EQ(h["status"], "ok");
    EXPECT_EQ(h["index_count"], 32);
    EXPECT_EQ(h["encoder_hash"].get<std::string>().size(), 64u);

    const auto& e = manifest_->entries[0];
    const auto m = json::parse(svc.get_model(e.model_id).body);
    EXPECT_EQ(m["instances"].size(), 2u);
    EXPECT_EQ(m["instances"][0]["depth_url"], "/api/images/" + e.instance_id + "/depth");
    EXPECT_EQ(svc.get_model("NOPE").status, 404);

    const auto img = svc.get_image(e.instance_id, "depth");
    EXPECT_EQ(img.status, 200);
    EXPECT_EQ(img.body, slurp(manifest_->resolve(e.depth_path)));
    EXPECT_EQ(svc.get_image(e.instance_id, "thumbnail").status, 404);
    EXPECT_EQ(svc.get_image("missing", "depth").status, 404);
}

TEST_F(ServiceFixture, HttpRoundTrip) {
    auto svc = make();
    const int port = svc.bind("127.0.0.1", 0);
    ASSERT_GT(port, 0);
    std::thread server([&] { svc.listen(); });

    httplib::Client client("127.0.0.1", port);
    const auto health = client.Get("/api/health");
    ASSERT_TRUE(health);
    EXPECT_EQ(health->status, 200);
    EXPECT_EQ(health->get_header_value("Access-Control-Allow-Origin"), "*");

    httplib::MultipartFormDataItems items{{"print", print_png(2), "print.png", "image/png"},
                                          {"mask", R"({"rect":[0,0,32,48]})", "", ""},
                                          {"k", "3", "", ""}};
    const auto res = client.Post("/api/queries", items);
    ASSERT_TRUE(res);
    ASSERT_EQ(res->status, 200) << res->body;
    const auto body = json::parse(res->body);
    EXPECT_EQ(body["results"].size(), 3u);

    const auto again = client.Get("/api/queries/" + body["query_id"].get<std::string>());
    ASSERT_TRUE(again);
    EXPECT_EQ(again->body, res->body);

    const auto bad = client.Post("/api/queries", httplib::MultipartFormDataItems{{"k", "3", "", ""}});
    ASSERT_TRUE(bad);
    EXPECT_EQ(bad->status, 400);

    const auto echo = client.Post("/api/masks", R"({"rect":[0,0,8,8]})", "application/json");
    ASSERT_TRUE(echo);
    EXPECT_EQ(echo->status, 200);
    EXPECT_EQ(echo->get_header_value("Content-Type"), "image/png");

    const auto image = client.Get("/api/images/" + manifest_->entries[0].instance_id + "/print");
    ASSERT_TRUE(image);
    EXPECT_EQ(image->body, print_png(0));

    svc.stop();
    server.join();
}
