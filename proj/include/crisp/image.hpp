#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace crisp {

// Single-channel float image, row-major. Values are expected in [0, 1].
// Depth maps, prints, noise fields and query prints all use this type.
class Image {
public:
    Image() = default;
    Image(int height, int width, float fill = 0.0f)
        : height_(height), width_(width),
          pixels_(static_cast<std::size_t>(height) * static_cast<std::size_t>(width), fill) {}
    Image(int height, int width, std::vector<float> pixels);

    int height() const noexcept { return height_; }
    int width() const noexcept { return width_; }
    std::size_t size() const noexcept { return pixels_.size(); }
    bool empty() const noexcept { return pixels_.empty(); }

    float& at(int y, int x) { return pixels_[static_cast<std::size_t>(y) * width_ + x]; }
    float at(int y, int x) const { return pixels_[static_cast<std::size_t>(y) * width_ + x]; }

    std::span<float> pixels() noexcept { return pixels_; }
    std::span<const float> pixels() const noexcept { return pixels_; }

    // Bilinear sample at continuous pixel coordinates; 0 outside the frame.
    float sample(double y, double x) const;

    float min_value() const;
    float max_value() const;
    double mean() const;
    std::size_t count_above(float threshold) const;

    bool same_shape(const Image& other) const noexcept {
        return height_ == other.height_ && width_ == other.width_;
    }

    friend bool operator==(const Image&, const Image&) = default;

private:
    int height_ = 0;
    int width_ = 0;
    std::vector<float> pixels_;
};

using AlignedImage = Image;

// Binary pixel mask marking the trusted region of a query print.
class VisibilityMask {
public:
    VisibilityMask() = default;
    VisibilityMask(int height, int width, bool fill = false)
        : height_(height), width_(width),
          bits_(static_cast<std::size_t>(height) * static_cast<std::size_t>(width), fill ? 1 : 0) {}

    static VisibilityMask full(int height, int width) { return {height, width, true}; }
    // Axis-aligned rectangle, clipped to the frame.
    static VisibilityMask rectangle(int height, int width, int x, int y, int w, int h);

    int height() const noexcept { return height_; }
    int width() const noexcept { return width_; }

    bool at(int y, int x) const { return bits_[static_cast<std::size_t>(y) * width_ + x] != 0; }
    void set(int y, int x, bool v) { bits_[static_cast<std::size_t>(y) * width_ + x] = v ? 1 : 0; }

    std::size_t count() const;
    std::span<const std::uint8_t> bits() const noexcept { return bits_; }

    Image to_image() const;
    static VisibilityMask from_image(const Image& img, float threshold = 0.5f);

    friend bool operator==(const VisibilityMask&, const VisibilityMask&) = default;

private:
    int height_ = 0;
    int width_ = 0;
    std::vector<std::uint8_t> bits_;
};

// Zero every pixel outside the mask.
Image apply_pixel_mask(const Image& img, const VisibilityMask& mask);

// Separable Gaussian blur with edge clamping.
Image gaussian_blur(const Image& img, double sigma);

// Min-max rescale to [0, 1]; a constant image becomes all zeros.
void rescale_unit(Image& img);

}  // namespace crisp
