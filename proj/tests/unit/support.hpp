#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "crisp/encoder.hpp"
#include "crisp/image.hpp"
#include "crisp/rng.hpp"

namespace test {

// Encoder small enough for per-test training: grid 8x4 on a 64x32 frame.
inline crisp::encoder::EncoderConfig tiny_encoder(int channels = 8) {
    crisp::encoder::EncoderConfig c;
    c.backbone = crisp::encoder::Backbone::SmallCnn;
    c.small_cnn_widths = {4, 8, 8};
    c.downsample_factor = 8;
    c.feature_channels = channels;
    c.head_conv_channels = {8, channels};
    c.frame = {64, 32};
    return c;
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        path_ = std::filesystem::temp_directory_path() /
                ("crisp_" + tag + "_" + std::to_string(std::random_device{}()));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

inline std::vector<float> random_floats(crisp::Rng& rng, std::size_t n, double lo = -1.0, double hi = 1.0) {
    std::vector<float> v(n);
    for (auto& x : v) x = static_cast<float>(rng.uniform(lo, hi));
    return v;
}

inline crisp::Image random_image(crisp::Rng& rng, int h, int w) {
    crisp::Image img(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) img.at(y, x) = static_cast<float>(rng.uniform());
    return img;
}

}  // namespace test
