#include "crisp/augment.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "crisp/error.hpp"

namespace crisp::augment {
namespace {

double fade(double t) { return t * t * t * (t * (t * 6.0 - 15.0) + 10.0); }

double lerp(double a, double b, double t) { return a + (b - a) * t; }

bool convex(const Quad& q) {
    int sign = 0;
    for (int i = 0; i < 4; ++i) {
        const auto [x0, y0] = q.vertices[i];
        const auto [x1, y1] = q.vertices[(i + 1) % 4];
        const auto [x2, y2] = q.vertices[(i + 2) % 4];
        const double cross = (x1 - x0) * (y2 - y1) - (y1 - y0) * (x2 - x1);
        if (cross == 0.0) return false;
        const int s = cross > 0.0 ? 1 : -1;
        if (sign == 0) sign = s;
        if (s != sign) return false;
    }
    return true;
}

bool inside_convex(const Quad& q, double x, double y) {
    bool has_pos = false;
    bool has_neg = false;
    for (int i = 0; i < 4; ++i) {
        const auto [x0, y0] = q.vertices[i];
        const auto [x1, y1] = q.vertices[(i + 1) % 4];
        const double cross = (x1 - x0) * (y - y0) - (y1 - y0) * (x - x0);
        if (cross > 0.0) has_pos = true;
        if (cross < 0.0) has_neg = true;
        if (has_pos && has_neg) return false;
    }
    return true;
}

FieldKind pick_kind(const AugmentConfig& config, Rng& rng) {
    const double total = config.gaussian_weight + config.perlin_weight;
    return rng.uniform() * total < config.gaussian_weight ? FieldKind::Gaussian : FieldKind::Perlin;
}

void check_unit(double p, const char* name) {
    if (!(p >= 0.0 && p <= 1.0)) fail(ErrorCode::InvalidConfig, std::string("augment.") + name + " must be in [0, 1]");
}

}  // namespace

void AugmentConfig::validate() const {
    check_unit(p_occlusion, "p_occlusion");
    check_unit(p_erasure, "p_erasure");
    check_unit(p_noise, "p_noise");
    if (overlap_rotation_range < 0.0 || overlap_translation_range < 0.0 || overlap_translation_range > 1.0)
        fail(ErrorCode::InvalidConfig, "augment: overlap ranges must be non-negative (translation <= 1)");
    if (quad_count_range.lo < 0 || quad_count_range.lo > quad_count_range.hi)
        fail(ErrorCode::InvalidConfig, "augment.quad_count_range must be ordered and non-negative");
    auto unit_range = [](Range<double> r, const char* name) {
        if (!(r.lo >= 0.0 && r.lo <= r.hi && r.hi <= 1.0))
            fail(ErrorCode::InvalidConfig, std::string("augment.") + name + " must be an ordered range in [0, 1]");
    };
    unit_range(quad_size_range, "quad_size_range");
    unit_range(erase_fraction_range, "erase_fraction_range");
    unit_range(noise_amplitude_range, "noise_amplitude_range");
    if (gaussian_weight < 0.0 || perlin_weight < 0.0 || gaussian_weight + perlin_weight <= 0.0)
        fail(ErrorCode::InvalidConfig, "augment: field kind weights must be non-negative with a positive sum");
    if (perlin_octaves < 1) fail(ErrorCode::InvalidConfig, "augment.perlin_octaves must be >= 1");
    if (perlin_base_scale < 2.0) fail(ErrorCode::InvalidConfig, "augment.perlin_base_scale must be >= 2");
    if (gaussian_sigma < 0.0) fail(ErrorCode::InvalidConfig, "augment.gaussian_sigma must be >= 0");
}

NoiseField make_perlin(int height, int width, int octaves, double base_scale, std::uint64_t seed) {
    if (octaves < 1 || base_scale < 2.0)
        fail(ErrorCode::InvalidArgument, "make_perlin: octaves >= 1 and base_scale >= 2 required");
    Rng rng(seed);
    Image acc(height, width);
    double amplitude = 1.0;
    double cell = base_scale;
    for (int o = 0; o < octaves; ++o) {
        const int gy = static_cast<int>(std::ceil(height / cell)) + 2;
        const int gx = static_cast<int>(std::ceil(width / cell)) + 2;
        std::vector<double> grad_y(static_cast<std::size_t>(gy) * gx);
        std::vector<double> grad_x(grad_y.size());
        for (std::size_t i = 0; i < grad_y.size(); ++i) {
            const double a = rng.uniform(0.0, 2.0 * std::numbers::pi);
            grad_y[i] = std::sin(a);
            grad_x[i] = std::cos(a);
        }
        // Random sub-cell offset so octaves do not share lattice lines.
        const double off_y = rng.uniform();
        const double off_x = rng.uniform();
        for (int y = 0; y < height; ++y) {
            const double fy = y / cell + off_y;
            const int iy = static_cast<int>(fy);
            const double ty = fy - iy;
            for (int x = 0; x < width; ++x) {
                const double fx = x / cell + off_x;
                const int ix = static_cast<int>(fx);
                const double tx = fx - ix;
                auto dot = [&](int cy, int cx, double dy, double dx) {
                    const std::size_t k = static_cast<std::size_t>(cy) * gx + cx;
                    return grad_y[k] * dy + grad_x[k] * dx;
                };
                const double n00 = dot(iy, ix, ty, tx);
                const double n01 = dot(iy, ix + 1, ty, tx - 1.0);
                const double n10 = dot(iy + 1, ix, ty - 1.0, tx);
                const double n11 = dot(iy + 1, ix + 1, ty - 1.0, tx - 1.0);
                const double u = fade(tx);
                const double v = fade(ty);
                const double value = lerp(lerp(n00, n01, u), lerp(n10, n11, u), v);
                acc.at(y, x) += static_cast<float>(amplitude * value);
            }
        }
        amplitude *= 0.5;  // persistence
        cell *= 0.5;       // lacunarity 2
        if (cell < 1.0) cell = 1.0;
    }
    rescale_unit(acc);
    return {std::move(acc), FieldKind::Perlin};
}

NoiseField make_gaussian(int height, int width, double sigma, std::uint64_t seed) {
    Rng rng(seed);
    Image img(height, width);
    for (auto& v : img.pixels()) v = static_cast<float>(rng.normal());
    img = gaussian_blur(img, sigma);
    rescale_unit(img);
    return {std::move(img), FieldKind::Gaussian};
}

NoiseField make_field(FieldKind kind, int height, int width, const AugmentConfig& config, std::uint64_t seed) {
    if (kind == FieldKind::Perlin)
        return make_perlin(height, width, config.perlin_octaves, config.perlin_base_scale, seed);
    return make_gaussian(height, width, config.gaussian_sigma, seed);
}

Image occlude_overlap(const Image& print, double rotation_deg, double translate_x, double translate_y) {
    if (rotation_deg == 0.0 && translate_x == 0.0 && translate_y == 0.0) return print;
    const double cy = 0.5 * (print.height() - 1);
    const double cx = 0.5 * (print.width() - 1);
    const double a = rotation_deg * std::numbers::pi / 180.0;
    const double ca = std::cos(a);
    const double sa = std::sin(a);
    Image out = print;
    for (int y = 0; y < print.height(); ++y) {
        for (int x = 0; x < print.width(); ++x) {
            // Inverse of: rotate about the centre, then translate.
            const double dy = y - translate_y - cy;
            const double dx = x - translate_x - cx;
            const double sy = cy + dy * ca - dx * sa;
            const double sx = cx + dy * sa + dx * ca;
            const float copy = std::clamp(print.sample(sy, sx), 0.0f, 1.0f);
            out.at(y, x) = std::max(out.at(y, x), copy);
        }
    }
    return out;
}

Quad sample_quad(int height, int width, Range<double> size_fraction, Rng& rng) {
    const double area = rng.uniform(size_fraction.lo, size_fraction.hi) * height * width;
    const double aspect = rng.uniform(0.2, 1.0);
    const double half_long = 0.5 * std::sqrt(area / aspect);
    const double half_short = half_long * aspect;
    const double theta = rng.uniform(0.0, std::numbers::pi);
    const double cy = rng.uniform(0.0, height);
    const double cx = rng.uniform(0.0, width);
    const double c = std::cos(theta);
    const double s = std::sin(theta);

    Quad rect;
    const double corners[4][2] = {{-half_long, -half_short}, {half_long, -half_short},
                                  {half_long, half_short}, {-half_long, half_short}};
    for (int i = 0; i < 4; ++i) {
        const double u = corners[i][0];
        const double v = corners[i][1];
        rect.vertices[i] = {cx + u * c - v * s, cy + u * s + v * c};
    }
    Quad q = rect;
    const double wobble = 0.25 * half_short;
    for (auto& [x, y] : q.vertices) {
        x += rng.uniform(-wobble, wobble);
        y += rng.uniform(-wobble, wobble);
    }
    if (!convex(q)) q = rect;
    q.erase = rng.bernoulli(0.5);
    q.value = q.erase ? 0.0f : static_cast<float>(rng.uniform(0.5, 1.0));
    return q;
}

Image apply_quads(const Image& print, std::span<const Quad> quads) {
    Image out = print;
    for (const Quad& q : quads) {
        double min_x = std::numeric_limits<double>::infinity();
        double max_x = -min_x;
        double min_y = min_x;
        double max_y = -min_x;
        for (const auto& [x, y] : q.vertices) {
            min_x = std::min(min_x, x);
            max_x = std::max(max_x, x);
            min_y = std::min(min_y, y);
            max_y = std::max(max_y, y);
        }
        const int y0 = std::max(0, static_cast<int>(std::floor(min_y)));
        const int y1 = std::min(out.height() - 1, static_cast<int>(std::ceil(max_y)));
        const int x0 = std::max(0, static_cast<int>(std::floor(min_x)));
        const int x1 = std::min(out.width() - 1, static_cast<int>(std::ceil(max_x)));
        const float fill = q.erase ? 0.0f : std::clamp(q.value, 0.0f, 1.0f);
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x)
                if (inside_convex(q, x, y)) out.at(y, x) = fill;
    }
    return out;
}

Image occlude_quads(const Image& print, int count, Range<double> size_fraction, Rng& rng) {
    if (count < 0) fail(ErrorCode::InvalidArgument, "occlude_quads: count must be >= 0");
    std::vector<Quad> quads;
    quads.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) quads.push_back(sample_quad(print.height(), print.width(), size_fraction, rng));
    return apply_quads(print, quads);
}

Image erase(const Image& print, const NoiseField& field, double erase_fraction) {
    if (!(erase_fraction >= 0.0 && erase_fraction <= 1.0))
        fail(ErrorCode::InvalidArgument, "erase: erase_fraction must be in [0, 1]");
    if (!field.values.same_shape(print)) fail(ErrorCode::ShapeMismatch, "erase: field and print shapes differ");
    if (erase_fraction == 0.0) return print;
    Image out = print;
    if (erase_fraction >= 1.0) {
        std::fill(out.pixels().begin(), out.pixels().end(), 0.0f);
        return out;
    }
    std::vector<float> sorted(field.values.pixels().begin(), field.values.pixels().end());
    const auto k = static_cast<std::size_t>(erase_fraction * static_cast<double>(sorted.size()));
    std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(k), sorted.end());
    const float threshold = sorted[k];
    auto px = out.pixels();
    auto fv = field.values.pixels();
    for (std::size_t i = 0; i < px.size(); ++i)
        if (fv[i] < threshold) px[i] = 0.0f;
    return out;
}

Image add_noise(const Image& print, const NoiseField& field, double amplitude) {
    if (!(amplitude >= 0.0 && amplitude <= 1.0))
        fail(ErrorCode::InvalidArgument, "add_noise: amplitude must be in [0, 1]");
    if (!field.values.same_shape(print)) fail(ErrorCode::ShapeMismatch, "add_noise: field and print shapes differ");
    if (amplitude == 0.0) return print;
    Image out = print;
    auto px = out.pixels();
    auto fv = field.values.pixels();
    for (std::size_t i = 0; i < px.size(); ++i)
        px[i] = std::clamp(static_cast<float>(px[i] + amplitude * fv[i]), 0.0f, 1.0f);
    return out;
}

DegradationRecipe sample_recipe(int height, int width, const AugmentConfig& config, Rng& rng) {
    DegradationRecipe r;
    if (rng.bernoulli(config.p_occlusion)) {
        if (rng.bernoulli(0.5)) {
            r.overlap = true;
            r.overlap_rotation_deg = rng.uniform(-config.overlap_rotation_range, config.overlap_rotation_range);
            r.overlap_dx = rng.uniform(-1.0, 1.0) * config.overlap_translation_range * width;
            r.overlap_dy = rng.uniform(-1.0, 1.0) * config.overlap_translation_range * height;
        } else {
            const int count = rng.uniform_int(config.quad_count_range.lo, config.quad_count_range.hi);
            for (int i = 0; i < count; ++i) r.quads.push_back(sample_quad(height, width, config.quad_size_range, rng));
        }
    }
    if (rng.bernoulli(config.p_erasure)) {
        r.erasure = true;
        r.erase_field = pick_kind(config, rng);
        r.erase_seed = rng.fork_seed();
        r.erase_fraction = rng.uniform(config.erase_fraction_range.lo, config.erase_fraction_range.hi);
    }
    if (rng.bernoulli(config.p_noise)) {
        r.noise = true;
        r.noise_field = pick_kind(config, rng);
        r.noise_seed = rng.fork_seed();
        r.noise_amplitude = rng.uniform(config.noise_amplitude_range.lo, config.noise_amplitude_range.hi);
    }
    return r;
}

Image apply_recipe(const Image& print, const DegradationRecipe& recipe, const AugmentConfig& config) {
    Image out = print;
    if (recipe.overlap) out = occlude_overlap(out, recipe.overlap_rotation_deg, recipe.overlap_dx, recipe.overlap_dy);
    if (!recipe.quads.empty()) out = apply_quads(out, recipe.quads);
    if (recipe.erasure) {
        const auto field = make_field(recipe.erase_field, out.height(), out.width(), config, recipe.erase_seed);
        out = erase(out, field, recipe.erase_fraction);
    }
    if (recipe.noise) {
        const auto field = make_field(recipe.noise_field, out.height(), out.width(), config, recipe.noise_seed);
        out = add_noise(out, field, recipe.noise_amplitude);
    }
    return out;
}

std::pair<Image, DegradationRecipe> augment(const Image& print, const AugmentConfig& config, Rng& rng) {
    DegradationRecipe recipe = sample_recipe(print.height(), print.width(), config, rng);
    Image out = apply_recipe(print, recipe, config);
    return {std::move(out), std::move(recipe)};
}

}  // namespace crisp::augment
