#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "crisp/dataset.hpp"
#include "crisp/error.hpp"
#include "crisp/png_io.hpp"
#include "crisp/rng.hpp"

namespace crisp::dataset {
namespace {

enum class MotifKind { Stripes, Chevrons, Lugs, Circles };

// One tiled primitive. Coordinates are pixels relative to the frame centre.
struct Motif {
    MotifKind kind = MotifKind::Stripes;
    double period = 16.0;
    double period2 = 16.0;
    double duty = 0.5;
    double angle = 0.0;  // radians
    double phase = 0.0;
    double phase2 = 0.0;
    double slope = 0.5;

    bool contact(double y, double x) const {
        const double c = std::cos(angle);
        const double s = std::sin(angle);
        const double u = x * c + y * s;
        const double v = -x * s + y * c;
        auto frac = [](double t) { return t - std::floor(t); };
        switch (kind) {
            case MotifKind::Stripes:
                return frac(u / period + phase) < duty;
            case MotifKind::Chevrons:
                return frac((y + slope * std::abs(x)) / period + phase) < duty;
            case MotifKind::Lugs:
                return frac(u / period + phase) < duty && frac(v / period2 + phase2) < duty;
            case MotifKind::Circles: {
                const double row = std::floor(v / period + phase2);
                const double shift = std::fmod(row, 2.0) == 0.0 ? 0.0 : 0.5;
                const double du = frac(u / period + phase + shift) - 0.5;
                const double dv = frac(v / period + phase2) - 0.5;
                return std::sqrt(du * du + dv * dv) < 0.5 * duty;
            }
        }
        return false;
    }
};

Motif sample_motif(MotifKind kind, Rng& rng) {
    Motif m;
    m.kind = kind;
    m.period = rng.uniform(12.0, 30.0);
    m.period2 = rng.uniform(12.0, 30.0);
    m.phase = rng.uniform();
    m.phase2 = rng.uniform();
    switch (kind) {
        case MotifKind::Stripes:
            m.duty = rng.uniform(0.35, 0.6);
            m.angle = rng.uniform(0.0, std::numbers::pi);
            break;
        case MotifKind::Chevrons:
            m.duty = rng.uniform(0.35, 0.6);
            m.slope = (rng.bernoulli(0.5) ? 1.0 : -1.0) * rng.uniform(0.4, 1.4);
            break;
        case MotifKind::Lugs:
            m.duty = rng.uniform(0.55, 0.8);
            m.angle = rng.uniform(0.0, 0.5 * std::numbers::pi);
            break;
        case MotifKind::Circles:
            m.duty = rng.uniform(0.5, 0.85);
            m.angle = rng.uniform(0.0, 0.5 * std::numbers::pi);
            break;
    }
    return m;
}

struct ModelPattern {
    Motif forefoot;
    Motif heel;
    double width_scale = 1.0;
    double waist_fraction = 0.55;  // forefoot/heel boundary, fraction of height
};

ModelPattern sample_model(int model_index, std::uint64_t seed) {
    Rng rng = Rng::derive(seed, static_cast<std::uint64_t>(model_index), 0);
    ModelPattern p;
    // Kinds cycle through all 16 forefoot/heel combinations before repeating.
    p.forefoot = sample_motif(static_cast<MotifKind>(model_index % 4), rng);
    p.heel = sample_motif(static_cast<MotifKind>((model_index / 4 + model_index) % 4), rng);
    p.width_scale = rng.uniform(0.88, 1.0);
    p.waist_fraction = rng.uniform(0.52, 0.6);
    return p;
}

bool inside_outline(double y, double x, const ModelPattern& p, CanonicalFrame frame) {
    const double h = frame.height;
    const double w = frame.width * p.width_scale;
    const double cx = 0.5 * (frame.width - 1);
    const double dx = x - cx;
    auto in_ellipse = [&](double cy, double ry, double rx) {
        const double a = (y - cy) / ry;
        const double b = dx / rx;
        return a * a + b * b <= 1.0;
    };
    if (in_ellipse(0.30 * h, 0.25 * h, 0.46 * w)) return true;
    if (in_ellipse(0.77 * h, 0.18 * h, 0.38 * w)) return true;
    return y >= 0.40 * h && y <= 0.72 * h && std::abs(dx) <= 0.30 * w;
}

struct InstanceStyle {
    double base = 0.2;       // depth of non-contact sole regions
    double amplitude = 0.75; // added depth at full contact
    double jitter_px = 0.0;
};

// Smooth random displacement with peak magnitude `amplitude`.
Image displacement_field(const CanonicalFrame& frame, double amplitude, Rng& rng) {
    Image field(frame.height, frame.width);
    if (amplitude <= 0.0) return field;
    for (auto& v : field.pixels()) v = static_cast<float>(rng.normal());
    field = gaussian_blur(field, 20.0);
    float peak = 0.0f;
    for (float v : field.pixels()) peak = std::max(peak, std::abs(v));
    if (peak > 0.0f)
        for (auto& v : field.pixels()) v = static_cast<float>(v / peak * amplitude);
    return field;
}

Image render_depth(const ModelPattern& p, const InstanceStyle& style, CanonicalFrame frame, Rng& rng) {
    const Image disp_y = displacement_field(frame, style.jitter_px, rng);
    const Image disp_x = displacement_field(frame, style.jitter_px, rng);
    const double cy = 0.5 * (frame.height - 1);
    const double cx = 0.5 * (frame.width - 1);
    const double waist = p.waist_fraction * frame.height;

    Image contact(frame.height, frame.width);
    Image outline(frame.height, frame.width);
    for (int y = 0; y < frame.height; ++y) {
        for (int x = 0; x < frame.width; ++x) {
            const double yy = y + disp_y.at(y, x);
            const double xx = x + disp_x.at(y, x);
            if (!inside_outline(yy, xx, p, frame)) continue;
            outline.at(y, x) = 1.0f;
            const Motif& m = yy < waist ? p.forefoot : p.heel;
            contact.at(y, x) = m.contact(yy - cy, xx - cx) ? 1.0f : 0.0f;
        }
    }
    const Image height_field = gaussian_blur(contact, 1.0);
    Image depth(frame.height, frame.width);
    for (int y = 0; y < frame.height; ++y)
        for (int x = 0; x < frame.width; ++x)
            if (outline.at(y, x) > 0.0f)
                depth.at(y, x) = static_cast<float>(
                    std::clamp(style.base + style.amplitude * height_field.at(y, x), 0.0, 1.0));
    return depth;
}

Image threshold_print(const Image& depth) {
    Image print(depth.height(), depth.width());
    for (std::size_t i = 0; i < depth.size(); ++i)
        print.pixels()[i] = depth.pixels()[i] > kPrintThreshold ? 1.0f : 0.0f;
    return print;
}

std::string model_name(int index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "SYN-%04d", index);
    return buf;
}

std::string instance_name(int model_index, int instance_index) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "SYN-%04d-%02d", model_index, instance_index);
    return buf;
}

void check_options(const SyntheticOptions& options) {
    if (options.n_models < 2) fail(ErrorCode::InvalidArgument, "generate_synthetic: n_models must be >= 2");
    if (options.instances_per_model < 2)
        fail(ErrorCode::InvalidArgument, "generate_synthetic: instances_per_model must be >= 2");
}

}  // namespace

Image synthetic_prototype(int model_index, const SyntheticOptions& options) {
    const ModelPattern pattern = sample_model(model_index, options.seed);
    Rng unused(0);
    return render_depth(pattern, InstanceStyle{}, options.frame, unused);
}

std::vector<ShoeInstance> generate_synthetic_instances(const SyntheticOptions& options) {
    check_options(options);
    std::vector<ShoeInstance> out;
    out.reserve(static_cast<std::size_t>(options.n_models) * options.instances_per_model);
    for (int m = 0; m < options.n_models; ++m) {
        const ModelPattern pattern = sample_model(m, options.seed);
        for (int i = 0; i < options.instances_per_model; ++i) {
            Rng rng = Rng::derive(options.seed, static_cast<std::uint64_t>(m), static_cast<std::uint64_t>(i) + 1);
            InstanceStyle style;
            style.base = rng.uniform(0.15, 0.25);
            style.amplitude = rng.uniform(0.65, 0.8);
            style.jitter_px = options.jitter_px;
            ShoeInstance inst;
            inst.instance_id = instance_name(m, i);
            inst.model_id = model_name(m);
            inst.source_tag = "synthetic";
            inst.depth = render_depth(pattern, style, options.frame, rng);
            inst.print = threshold_print(inst.depth);
            out.push_back(std::move(inst));
        }
    }
    return out;
}

DatasetManifest generate_synthetic(const SyntheticOptions& options, const std::filesystem::path& out_dir) {
    const auto instances = generate_synthetic_instances(options);
    DatasetManifest manifest;
    manifest.canonical_size = options.frame;
    manifest.base_dir = out_dir;
    std::filesystem::create_directories(out_dir / "images");
    for (const auto& inst : instances) {
        ManifestEntry e;
        e.instance_id = inst.instance_id;
        e.model_id = inst.model_id;
        e.depth_path = "images/" + inst.instance_id + "_depth.png";
        e.print_path = "images/" + inst.instance_id + "_print.png";
        e.source_tag = inst.source_tag;
        e.split = Split::Train;
        write_png(out_dir / e.depth_path, inst.depth, PngDepth::Sixteen);
        write_png(out_dir / e.print_path, inst.print, PngDepth::Eight);
        manifest.entries.push_back(std::move(e));
    }
    save_manifest(manifest, out_dir / "manifest.jsonl");
    return manifest;
}

}  // namespace crisp::dataset
