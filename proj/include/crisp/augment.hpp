#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "crisp/image.hpp"
#include "crisp/rng.hpp"

namespace crisp::augment {

template <typename T>
struct Range {
    T lo;
    T hi;
};

enum class FieldKind { Gaussian, Perlin };

struct AugmentConfig {
    double p_occlusion = 0.5;
    double p_erasure = 0.5;
    double p_noise = 0.5;
    double overlap_rotation_range = 20.0;     // degrees, symmetric
    double overlap_translation_range = 0.15;  // fraction of frame, symmetric
    Range<int> quad_count_range{1, 3};
    Range<double> quad_size_range{0.05, 0.25};  // fraction of frame area
    Range<double> erase_fraction_range{0.2, 0.7};
    Range<double> noise_amplitude_range{0.1, 0.5};
    double gaussian_weight = 0.5;
    double perlin_weight = 0.5;
    int perlin_octaves = 4;
    double perlin_base_scale = 32.0;
    double gaussian_sigma = 1.0;  // smoothing of the i.i.d. Gaussian field, pixels

    // Throws InvalidConfig when a probability or range is out of bounds.
    void validate() const;

    static AugmentConfig disabled() {
        AugmentConfig c;
        c.p_occlusion = c.p_erasure = c.p_noise = 0.0;
        return c;
    }
};

struct NoiseField {
    Image values;  // in [0, 1]
    FieldKind kind = FieldKind::Gaussian;
};

NoiseField make_perlin(int height, int width, int octaves, double base_scale, std::uint64_t seed);
NoiseField make_gaussian(int height, int width, double sigma, std::uint64_t seed);
NoiseField make_field(FieldKind kind, int height, int width, const AugmentConfig& config, std::uint64_t seed);

// Convex quadrilateral, vertices in (x, y) pixel coordinates, counter-clockwise
// or clockwise.
struct Quad {
    std::array<std::pair<double, double>, 4> vertices{};
    bool erase = true;
    float value = 0.0f;  // fill value when saturating

    friend bool operator==(const Quad&, const Quad&) = default;
};

// Pixelwise max of the print and a copy rotated about the frame centre and
// then translated by (dx, dy) pixels.
Image occlude_overlap(const Image& print, double rotation_deg, double translate_x, double translate_y);

Quad sample_quad(int height, int width, Range<double> size_fraction, Rng& rng);
Image apply_quads(const Image& print, std::span<const Quad> quads);
Image occlude_quads(const Image& print, int count, Range<double> size_fraction, Rng& rng);

// Sets pixels whose field value falls below the erase_fraction quantile of
// the field to 0.
Image erase(const Image& print, const NoiseField& field, double erase_fraction);

// clip(print + amplitude * field, 0, 1).
Image add_noise(const Image& print, const NoiseField& field, double amplitude);

// Every sampled parameter of one augment call; replaying it reproduces the
// output exactly.
struct DegradationRecipe {
    bool overlap = false;
    double overlap_rotation_deg = 0.0;
    double overlap_dx = 0.0;
    double overlap_dy = 0.0;
    std::vector<Quad> quads;

    bool erasure = false;
    FieldKind erase_field = FieldKind::Gaussian;
    std::uint64_t erase_seed = 0;
    double erase_fraction = 0.0;

    bool noise = false;
    FieldKind noise_field = FieldKind::Gaussian;
    std::uint64_t noise_seed = 0;
    double noise_amplitude = 0.0;

    friend bool operator==(const DegradationRecipe&, const DegradationRecipe&) = default;
};

DegradationRecipe sample_recipe(int height, int width, const AugmentConfig& config, Rng& rng);

// Applies occlusion, then erasure, then noise.
Image apply_recipe(const Image& print, const DegradationRecipe& recipe, const AugmentConfig& config);

std::pair<Image, DegradationRecipe> augment(const Image& print, const AugmentConfig& config, Rng& rng);

}  // namespace crisp::augment
