#include "crisp/masking.hpp"

#include <algorithm>
#include <cmath>

#include "crisp/error.hpp"

namespace crisp::masking {

std::size_t CellMask::count() const {
    return static_cast<std::size_t>(std::count(cells.begin(), cells.end(), std::uint8_t{1}));
}

std::vector<int> CellMask::indices() const {
    std::vector<int> out;
    for (std::size_t i = 0; i < cells.size(); ++i)
        if (cells[i]) out.push_back(static_cast<int>(i));
    return out;
}

CellMask downsample_mask(const VisibilityMask& mask, int grid_height, int grid_width) {
    if (grid_height <= 0 || grid_width <= 0 || mask.height() % grid_height != 0 || mask.width() % grid_width != 0)
        fail(ErrorCode::ShapeMismatch, "mask of " + std::to_string(mask.height()) + "x" + std::to_string(mask.width()) +
                                           " does not tile a " + std::to_string(grid_height) + "x" +
                                           std::to_string(grid_width) + " grid");
    const int ch = mask.height() / grid_height;
    const int cw = mask.width() / grid_width;
    CellMask out{grid_height, grid_width, std::vector<std::uint8_t>(static_cast<std::size_t>(grid_height) * grid_width)};
    for (int gy = 0; gy < grid_height; ++gy)
        for (int gx = 0; gx < grid_width; ++gx) {
            int covered = 0;
            for (int y = gy * ch; y < (gy + 1) * ch; ++y)
                for (int x = gx * cw; x < (gx + 1) * cw; ++x) covered += mask.at(y, x) ? 1 : 0;
            // covered / (ch * cw) >= 0.5 without rounding
            out.cells[static_cast<std::size_t>(gy) * grid_width + gx] = 2 * covered >= ch * cw ? 1 : 0;
        }
    return out;
}

std::vector<double> mask_features(std::span<const float> z, int channels, const CellMask& mask) {
    const int cells = mask.height * mask.width;
    if (z.size() != static_cast<std::size_t>(channels) * cells)
        fail(ErrorCode::ShapeMismatch, "feature map does not match the cell mask grid");
    const std::vector<int> active = mask.indices();
    if (active.empty()) fail(ErrorCode::EmptyMask, "mask covers no feature cell");

    std::vector<double> out(z.size(), 0.0);
    double norm2 = 0.0;
    for (int c = 0; c < channels; ++c) {
        const std::size_t base = static_cast<std::size_t>(c) * cells;
        for (int cell : active) {
            const double v = z[base + cell];
            out[base + cell] = v;
            norm2 += v * v;
        }
    }
    if (!(norm2 > 0.0)) fail(ErrorCode::ZeroVector, "masked features are identically zero");
    const double norm = std::sqrt(norm2);
    for (int c = 0; c < channels; ++c) {
        const std::size_t base = static_cast<std::size_t>(c) * cells;
        for (int cell : active) out[base + cell] /= norm;
    }
    return out;
}

std::vector<double> mask_features(const encoder::SpatialFeatureMap& z, const CellMask& mask) {
    if (z.height != mask.height || z.width != mask.width)
        fail(ErrorCode::ShapeMismatch, "feature grid and cell mask differ");
    return mask_features(z.values, z.channels, mask);
}

std::vector<double> mask_features(const encoder::SpatialFeatureMap& z, const VisibilityMask& mask) {
    return mask_features(z, downsample_mask(mask, z.height, z.width));
}

std::vector<double> mask_features_backward(std::span<const float> z, int channels, const CellMask& mask,
                                           std::span<const double> zbar, std::span<const double> grad_zbar) {
    const int cells = mask.height * mask.width;
    const std::vector<int> active = mask.indices();
    double norm2 = 0.0;
    double dot = 0.0;
    for (int c = 0; c < channels; ++c) {
        const std::size_t base = static_cast<std::size_t>(c) * cells;
        for (int cell : active) {
            const double v = z[base + cell];
            norm2 += v * v;
            dot += zbar[base + cell] * grad_zbar[base + cell];
        }
    }
    std::vector<double> grad(z.size(), 0.0);
    if (!(norm2 > 0.0)) return grad;
    const double inv_norm = 1.0 / std::sqrt(norm2);
    for (int c = 0; c < channels; ++c) {
        const std::size_t base = static_cast<std::size_t>(c) * cells;
        for (int cell : active)
            grad[base + cell] = (grad_zbar[base + cell] - zbar[base + cell] * dot) * inv_norm;
    }
    return grad;
}

VisibilityMask sample_rect_mask(Rng& rng, augment::Range<double> area_fraction, dataset::CanonicalFrame frame) {
    if (!(area_fraction.lo > 0.0 && area_fraction.lo <= area_fraction.hi && area_fraction.hi <= 1.0))
        fail(ErrorCode::InvalidArgument, "mask area fraction range must lie in (0, 1]");
    const double a = rng.uniform(area_fraction.lo, area_fraction.hi);
    // Height fraction in [a, 1] keeps the width fraction a / hf within [a, 1].
    const double hf = rng.uniform(a, 1.0);
    const int h = std::clamp(static_cast<int>(std::lround(hf * frame.height)), 1, frame.height);
    const double target = a * frame.height * frame.width;
    const int w = std::clamp(static_cast<int>(std::lround(target / h)), 1, frame.width);
    const int y = static_cast<int>(rng.below(static_cast<std::uint64_t>(frame.height - h) + 1));
    const int x = static_cast<int>(rng.below(static_cast<std::uint64_t>(frame.width - w) + 1));
    return VisibilityMask::rectangle(frame.height, frame.width, x, y, w, h);
}

}  // namespace crisp::masking
