#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "crisp/image.hpp"

namespace crisp::dataset {

// Canonical frame: height runs along the long axis of the shoe.
struct CanonicalFrame {
    int height = 384;
    int width = 192;

    friend bool operator==(const CanonicalFrame&, const CanonicalFrame&) = default;
};

// ---------------------------------------------------------------------------
// Alignment
// ---------------------------------------------------------------------------

struct AlignOptions {
    CanonicalFrame frame;
    float foreground_threshold = 0.05f;
    // Fraction of the frame height covered by the foreground's major-axis extent.
    double extent_fraction = 0.9;
    std::size_t min_foreground_pixels = 50;
    // Eigenvalue ratio above which the foreground counts as isotropic.
    double isotropy_ratio = 0.98;
    // Transforms this close to identity are snapped to it, which keeps
    // align(align(x)) from re-blurring an already aligned image.
    double snap_translation_px = 1.0;
    double snap_rotation_deg = 0.5;
    double snap_scale = 0.01;
};

// Second-order statistics of the binary foreground (pixels above threshold).
struct ForegroundMoments {
    std::size_t count = 0;
    double cy = 0.0;
    double cx = 0.0;
    double syy = 0.0;
    double sxx = 0.0;
    double sxy = 0.0;
    // Angle of the largest-eigenvalue eigenvector, measured from the vertical
    // (image y) axis, in degrees within (-90, 90].
    double major_axis_deg = 0.0;
    double major_eigenvalue = 0.0;
    double minor_eigenvalue = 0.0;
};

ForegroundMoments compute_moments(const Image& img, float threshold);

// Maps source pixel p to canonical pixel: out = frame_center + scale * R(rotation) * (p - source_center).
struct SimilarityTransform {
    double source_cy = 0.0;
    double source_cx = 0.0;
    double rotation_deg = 0.0;
    double scale = 1.0;
    bool degenerate_moments = false;
};

SimilarityTransform estimate_alignment(const Image& raw, const AlignOptions& options = {});

// Bilinear resampling into the canonical frame; out-of-source pixels are 0.
Image warp_to_frame(const Image& src, const SimilarityTransform& transform, CanonicalFrame frame);

struct AlignResult {
    AlignedImage image;
    SimilarityTransform transform;
    // Isotropic foreground: only translation and scale were applied.
    bool degenerate_moments = false;
};

AlignResult align(const Image& raw, const AlignOptions& options = {});

// ---------------------------------------------------------------------------
// Manifest and ground truth
// ---------------------------------------------------------------------------

enum class Split { Train, RefOnly, Query };

std::string to_string(Split split);
Split split_from_string(const std::string& text);

struct ManifestEntry {
    std::string instance_id;
    std::string model_id;
    std::string depth_path;  // relative to the manifest directory, forward slashes
    std::string print_path;
    std::string source_tag;
    Split split = Split::Train;

    friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

struct DatasetManifest {
    std::vector<ManifestEntry> entries;
    CanonicalFrame canonical_size;
    // Directory that relative image paths resolve against; not serialized.
    std::filesystem::path base_dir;

    std::vector<std::string> model_ids() const;
    std::vector<std::string> trainable_model_ids() const;
    std::vector<const ManifestEntry*> instances_of(const std::string& model_id, bool trainable_only) const;
    const ManifestEntry* find(const std::string& instance_id) const;
    std::filesystem::path resolve(const std::string& relative) const;
};

bool same_fields(const DatasetManifest& a, const DatasetManifest& b);

// Throws DuplicateInstanceId; checks files exist when verify_files is set
// (MissingImageFile).
void validate_manifest(const DatasetManifest& manifest, bool verify_files);

DatasetManifest load_manifest(const std::filesystem::path& path, bool verify_files = true);
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

struct ShoeInstance {
    std::string instance_id;
    std::string model_id;
    AlignedImage depth;
    AlignedImage print;
    std::string source_tag;
};

ShoeInstance load_instance(const DatasetManifest& manifest, const ManifestEntry& entry);

using GroundTruthMap = std::map<std::string, std::set<std::string>>;

GroundTruthMap load_ground_truth(const std::filesystem::path& path);
void save_ground_truth(const GroundTruthMap& truth, const std::filesystem::path& path);
// Every model must exist in the reference manifest and every set must be non-empty.
void validate_ground_truth(const GroundTruthMap& truth, const DatasetManifest& reference);

// ---------------------------------------------------------------------------
// Synthetic data
// ---------------------------------------------------------------------------

struct SyntheticOptions {
    int n_models = 16;
    int instances_per_model = 2;
    std::uint64_t seed = 0;
    CanonicalFrame frame;
    // Peak elastic displacement between instances of one model, in pixels.
    double jitter_px = 2.0;
};

// Clean, jitter-free depth map of one synthetic model.
Image synthetic_prototype(int model_index, const SyntheticOptions& options);

std::vector<ShoeInstance> generate_synthetic_instances(const SyntheticOptions& options);

// Writes depth (16-bit) and print (8-bit) PNGs plus manifest.jsonl into
// out_dir and returns the manifest.
DatasetManifest generate_synthetic(const SyntheticOptions& options, const std::filesystem::path& out_dir);

// Marks floor(fraction_unseen * n_models) models ref_only; the rest train.
DatasetManifest split_seen_unseen(const DatasetManifest& manifest, double fraction_unseen, std::uint64_t seed);

inline constexpr float kPrintThreshold = 0.5f;

}  // namespace crisp::dataset
