#include <gtest/gtest.h>

#include "crisp/error.hpp"
#include "crisp/image.hpp"
#include "crisp/png_io.hpp"
#include "crisp/rng.hpp"
#include "support.hpp"

using namespace crisp;

TEST(Rng, SameSeedSameStream) {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
}

TEST(Rng, DerivedStreamsDiffer) {
    auto a = Rng::derive(1, 0, 0);
    auto b = Rng::derive(1, 1, 0);
    auto c = Rng::derive(1, 0, 1);
    const auto x = a.next_u64();
    EXPECT_NE(x, b.next_u64());
    EXPECT_NE(x, c.next_u64());
}

TEST(Rng, SerializeRoundTrip) {
    Rng a(9);
    a.next_u64();
    Rng b;
    b.deserialize(a.serialize());
    for (int i = 0; i < 10; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
}

TEST(Rng, BelowStaysInRange) {
    Rng r(3);
    for (int i = 0; i < 1000; ++i) {
        EXPECT_LT(r.below(7), 7u);
        const int v = r.uniform_int(-2, 2);
        EXPECT_GE(v, -2);
        EXPECT_LE(v, 2);
    }
}

TEST(Image, BilinearSample) {
    Image img(2, 2, std::vector<float>{0.0f, 1.0f, 0.0f, 1.0f});
    EXPECT_FLOAT_EQ(img.sample(0.0, 0.5), 0.5f);
    EXPECT_FLOAT_EQ(img.sample(1.0, 1.0), 1.0f);
    EXPECT_FLOAT_EQ(img.sample(-5.0, 0.0), 0.0f);
}

TEST(VisibilityMask, RectangleIsClipped) {
    const auto m = VisibilityMask::rectangle(10, 10, 8, 8, 5, 5);
    EXPECT_EQ(m.count(), 4u);
    EXPECT_TRUE(m.at(9, 9));
    EXPECT_FALSE(m.at(7, 7));
}

TEST(VisibilityMask, ImageRoundTrip) {
    const auto m = VisibilityMask::rectangle(6, 4, 1, 2, 2, 3);
    EXPECT_EQ(VisibilityMask::from_image(m.to_image()), m);
}

TEST(PngIo, SixteenBitRoundTripIsExactOnGrid) {
    Image img(3, 5);
    for (int y = 0; y < 3; ++y)
        for (int x = 0; x < 5; ++x) img.at(y, x) = static_cast<float>((y * 5 + x) * 4369) / 65535.0f;
    const auto back = decode_png(encode_png(img, PngDepth::Sixteen));
    ASSERT_TRUE(back.same_shape(img));
    for (int y = 0; y < 3; ++y)
        for (int x = 0; x < 5; ++x) EXPECT_FLOAT_EQ(back.at(y, x), img.at(y, x));
}

TEST(PngIo, EightBitQuantizes) {
    Image img(1, 2, std::vector<float>{0.5f, 1.0f});
    const auto back = decode_png(encode_png(img, PngDepth::Eight));
    EXPECT_NEAR(back.at(0, 0), 0.5f, 1.0f / 255.0f);
    EXPECT_FLOAT_EQ(back.at(0, 1), 1.0f);
}

TEST(PngIo, MissingFileAndGarbage) {
    EXPECT_THROW(read_png("/nonexistent/file.png"), Error);
    try {
        decode_png("not a png");
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::ImageIo);
    }
}

TEST(PngIo, FileRoundTrip) {
    test::TempDir dir("png");
    Rng rng(1);
    const auto img = test::random_image(rng, 7, 3);
    write_png(dir / "a.png", img, PngDepth::Sixteen);
    const auto back = read_png(dir / "a.png");
    for (int y = 0; y < 7; ++y)
        for (int x = 0; x < 3; ++x) EXPECT_NEAR(back.at(y, x), img.at(y, x), 1.0 / 65535.0);
}
