#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "crisp/dataset.hpp"
#include "crisp/error.hpp"

namespace crisp::dataset {
namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;

}  // namespace

ForegroundMoments compute_moments(const Image& img, float threshold) {
    ForegroundMoments m;
    double sy = 0.0;
    double sx = 0.0;
    for (int y = 0; y < img.height(); ++y)
        for (int x = 0; x < img.width(); ++x)
            if (img.at(y, x) > threshold) {
                ++m.count;
                sy += y;
                sx += x;
            }
    if (m.count == 0) return m;
    const double n = static_cast<double>(m.count);
    m.cy = sy / n;
    m.cx = sx / n;
    for (int y = 0; y < img.height(); ++y)
        for (int x = 0; x < img.width(); ++x)
            if (img.at(y, x) > threshold) {
                const double dy = y - m.cy;
                const double dx = x - m.cx;
                m.syy += dy * dy;
                m.sxx += dx * dx;
                m.sxy += dy * dx;
            }
    m.syy /= n;
    m.sxx /= n;
    m.sxy /= n;

    const double mean = 0.5 * (m.syy + m.sxx);
    const double half_diff = 0.5 * (m.syy - m.sxx);
    const double radius = std::sqrt(half_diff * half_diff + m.sxy * m.sxy);
    m.major_eigenvalue = mean + radius;
    m.minor_eigenvalue = mean - radius;
    m.major_axis_deg = 0.5 * std::atan2(2.0 * m.sxy, m.syy - m.sxx) / kDegToRad;
    if (m.major_axis_deg <= -90.0) m.major_axis_deg += 180.0;
    return m;
}

SimilarityTransform estimate_alignment(const Image& raw, const AlignOptions& options) {
    const ForegroundMoments m = compute_moments(raw, options.foreground_threshold);
    if (m.count < options.min_foreground_pixels)
        fail(ErrorCode::TooFewForegroundPixels,
             "align: " + std::to_string(m.count) + " foreground pixels, need " +
                 std::to_string(options.min_foreground_pixels));

    SimilarityTransform t;
    t.source_cy = m.cy;
    t.source_cx = m.cx;
    t.degenerate_moments =
        m.major_eigenvalue <= 0.0 || m.minor_eigenvalue / m.major_eigenvalue >= options.isotropy_ratio;

    // Major axis direction in (y, x); vertical when degenerate.
    double axis_deg = t.degenerate_moments ? 0.0 : m.major_axis_deg;
    t.rotation_deg = -axis_deg;
    const double vy = std::cos(axis_deg * kDegToRad);
    const double vx = std::sin(axis_deg * kDegToRad);

    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (int y = 0; y < raw.height(); ++y)
        for (int x = 0; x < raw.width(); ++x)
            if (raw.at(y, x) > options.foreground_threshold) {
                const double proj = (y - m.cy) * vy + (x - m.cx) * vx;
                lo = std::min(lo, proj);
                hi = std::max(hi, proj);
            }
    const double extent = hi - lo + 1.0;
    t.scale = options.extent_fraction * options.frame.height / extent;

    if (raw.height() == options.frame.height && raw.width() == options.frame.width) {
        const double fcy = 0.5 * (options.frame.height - 1);
        const double fcx = 0.5 * (options.frame.width - 1);
        const bool near_identity = std::abs(t.source_cy - fcy) <= options.snap_translation_px &&
                                   std::abs(t.source_cx - fcx) <= options.snap_translation_px &&
                                   std::abs(t.rotation_deg) <= options.snap_rotation_deg &&
                                   std::abs(t.scale - 1.0) <= options.snap_scale;
        if (near_identity) {
            t.source_cy = fcy;
            t.source_cx = fcx;
            t.rotation_deg = 0.0;
            t.scale = 1.0;
        }
    }
    return t;
}

Image warp_to_frame(const Image& src, const SimilarityTransform& t, CanonicalFrame frame) {
    Image out(frame.height, frame.width);
    const double fcy = 0.5 * (frame.height - 1);
    const double fcx = 0.5 * (frame.width - 1);
    // Inverse map: p = source_center + R(-rotation) * (o - frame_center) / scale.
    const double a = -t.rotation_deg * kDegToRad;
    const double ca = std::cos(a);
    const double sa = std::sin(a);
    const double inv_scale = 1.0 / t.scale;
    for (int oy = 0; oy < frame.height; ++oy) {
        for (int ox = 0; ox < frame.width; ++ox) {
            const double dy = (oy - fcy) * inv_scale;
            const double dx = (ox - fcx) * inv_scale;
            const double sy = t.source_cy + dy * ca - dx * sa;
            const double sx = t.source_cx + dy * sa + dx * ca;
            out.at(oy, ox) = std::clamp(src.sample(sy, sx), 0.0f, 1.0f);
        }
    }
    return out;
}

AlignResult align(const Image& raw, const AlignOptions& options) {
    AlignResult result;
    result.transform = estimate_alignment(raw, options);
    result.degenerate_moments = result.transform.degenerate_moments;
    result.image = warp_to_frame(raw, result.transform, options.frame);
    return result;
}

}  // namespace crisp::dataset
