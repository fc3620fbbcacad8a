#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "crisp/augment.hpp"
#include "crisp/dataset.hpp"
#include "crisp/encoder.hpp"
#include "crisp/image.hpp"
#include "crisp/rng.hpp"

namespace crisp::masking {

// Visibility mask reduced to the feature grid.
struct CellMask {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> cells;

    static CellMask full(int height, int width) {
        return {height, width, std::vector<std::uint8_t>(static_cast<std::size_t>(height) * width, 1)};
    }
    std::size_t count() const;
    std::vector<int> indices() const;
    bool at(int y, int x) const { return cells[static_cast<std::size_t>(y) * width + x] != 0; }

    friend bool operator==(const CellMask&, const CellMask&) = default;
};

// Area-average of the pixel mask over each grid cell, thresholded at 0.5
// (inclusive). The mask dimensions must be multiples of the grid.
CellMask downsample_mask(const VisibilityMask& mask, int grid_height, int grid_width);

// z with cells outside the mask zeroed, flattened [C][cells] and scaled to
// unit L2 norm. Throws EmptyMask when no cell is covered and ZeroVector when
// the masked features are identically zero. Values outside the mask are never
// read.
std::vector<double> mask_features(std::span<const float> z, int channels, const CellMask& mask);
std::vector<double> mask_features(const encoder::SpatialFeatureMap& z, const CellMask& mask);
std::vector<double> mask_features(const encoder::SpatialFeatureMap& z, const VisibilityMask& mask);

// Gradient of a loss w.r.t. z given its gradient w.r.t. the masked unit
// vector zbar = mask_features(z, mask):
//   dz = m * (g - zbar (zbar . g)) / ||m z||
std::vector<double> mask_features_backward(std::span<const float> z, int channels, const CellMask& mask,
                                           std::span<const double> zbar, std::span<const double> grad_zbar);

// Axis-aligned rectangle whose area fraction is uniform in the range and whose
// position is uniform subject to containment.
VisibilityMask sample_rect_mask(Rng& rng, augment::Range<double> area_fraction, dataset::CanonicalFrame frame);

}  // namespace crisp::masking
