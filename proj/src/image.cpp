#include "crisp/image.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace crisp {

Image::Image(int height, int width, std::vector<float> pixels)
    : height_(height), width_(width), pixels_(std::move(pixels)) {
    if (pixels_.size() != static_cast<std::size_t>(height) * static_cast<std::size_t>(width))
        throw std::invalid_argument("Image: pixel count does not match dimensions");
}

float Image::sample(double y, double x) const {
    const double fy = std::floor(y);
    const double fx = std::floor(x);
    const int y0 = static_cast<int>(fy);
    const int x0 = static_cast<int>(fx);
    const double dy = y - fy;
    const double dx = x - fx;
    auto px = [&](int yy, int xx) -> double {
        if (yy < 0 || yy >= height_ || xx < 0 || xx >= width_) return 0.0;
        return at(yy, xx);
    };
    // Exact grid positions return the stored value untouched.
    if (dy == 0.0 && dx == 0.0) return static_cast<float>(px(y0, x0));
    const double top = px(y0, x0) * (1.0 - dx) + px(y0, x0 + 1) * dx;
    const double bottom = px(y0 + 1, x0) * (1.0 - dx) + px(y0 + 1, x0 + 1) * dx;
    return static_cast<float>(top * (1.0 - dy) + bottom * dy);
}

float Image::min_value() const {
    return pixels_.empty() ? 0.0f : *std::min_element(pixels_.begin(), pixels_.end());
}

float Image::max_value() const {
    return pixels_.empty() ? 0.0f : *std::max_element(pixels_.begin(), pixels_.end());
}

double Image::mean() const {
    if (pixels_.empty()) return 0.0;
    return std::accumulate(pixels_.begin(), pixels_.end(), 0.0) / static_cast<double>(pixels_.size());
}

std::size_t Image::count_above(float threshold) const {
    return static_cast<std::size_t>(
        std::count_if(pixels_.begin(), pixels_.end(), [threshold](float v) { return v > threshold; }));
}

VisibilityMask VisibilityMask::rectangle(int height, int width, int x, int y, int w, int h) {
    VisibilityMask m(height, width);
    const int x0 = std::clamp(x, 0, width);
    const int y0 = std::clamp(y, 0, height);
    const int x1 = std::clamp(x + w, 0, width);
    const int y1 = std::clamp(y + h, 0, height);
    for (int yy = y0; yy < y1; ++yy)
        for (int xx = x0; xx < x1; ++xx) m.set(yy, xx, true);
    return m;
}

std::size_t VisibilityMask::count() const {
    return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
}

Image VisibilityMask::to_image() const {
    Image img(height_, width_);
    for (std::size_t i = 0; i < bits_.size(); ++i) img.pixels()[i] = bits_[i] ? 1.0f : 0.0f;
    return img;
}

VisibilityMask VisibilityMask::from_image(const Image& img, float threshold) {
    VisibilityMask m(img.height(), img.width());
    for (std::size_t i = 0; i < img.size(); ++i) m.bits_[i] = img.pixels()[i] >= threshold ? 1 : 0;
    return m;
}

Image apply_pixel_mask(const Image& img, const VisibilityMask& mask) {
    if (img.height() != mask.height() || img.width() != mask.width())
        throw std::invalid_argument("apply_pixel_mask: mask and image shapes differ");
    Image out = img;
    auto bits = mask.bits();
    auto px = out.pixels();
    for (std::size_t i = 0; i < px.size(); ++i)
        if (!bits[i]) px[i] = 0.0f;
    return out;
}

Image gaussian_blur(const Image& img, double sigma) {
    if (sigma <= 0.0) return img;
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> kernel(2 * radius + 1);
    double total = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        kernel[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
        total += kernel[i + radius];
    }
    for (auto& k : kernel) k /= total;

    const int h = img.height();
    const int w = img.width();
    Image tmp(h, w);
    Image out(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int i = -radius; i <= radius; ++i)
                acc += kernel[i + radius] * img.at(y, std::clamp(x + i, 0, w - 1));
            tmp.at(y, x) = static_cast<float>(acc);
        }
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int i = -radius; i <= radius; ++i)
                acc += kernel[i + radius] * tmp.at(std::clamp(y + i, 0, h - 1), x);
            out.at(y, x) = static_cast<float>(acc);
        }
    return out;
}

void rescale_unit(Image& img) {
    if (img.empty()) return;
    const float lo = img.min_value();
    const float hi = img.max_value();
    auto px = img.pixels();
    if (hi - lo <= 0.0f) {
        std::fill(px.begin(), px.end(), 0.0f);
        return;
    }
    const double range = static_cast<double>(hi) - lo;
    for (auto& v : px) v = static_cast<float>((static_cast<double>(v) - lo) / range);
}

}  // namespace crisp
