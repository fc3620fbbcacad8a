#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "crisp/dataset.hpp"
#include "crisp/encoder.hpp"
#include "crisp/training.hpp"

namespace crisp::index {

inline constexpr std::uint32_t kIndexVersion = 1;

struct IndexHeader {
    std::uint32_t format_version = kIndexVersion;
    std::uint32_t channels = 0;
    std::uint32_t grid_height = 0;
    std::uint32_t grid_width = 0;
    encoder::Digest encoder_hash{};

    std::size_t cells() const { return static_cast<std::size_t>(grid_height) * grid_width; }
    std::size_t entry_floats() const { return channels * cells(); }

    friend bool operator==(const IndexHeader&, const IndexHeader&) = default;
};

// Raw (unmasked, unnormalized) database features, one row per reference
// instance, stored contiguously as [count][C][Hf*Wf].
class FeatureIndex {
public:
    FeatureIndex() = default;
    explicit FeatureIndex(IndexHeader header) : header_(header) {}

    const IndexHeader& header() const { return header_; }
    std::size_t count() const { return instance_ids_.size(); }

    // Throws ShapeMismatch or DuplicateInstanceId.
    void add(const std::string& instance_id, const std::string& model_id, std::span<const float> features);
    void add(const std::string& instance_id, const std::string& model_id, const encoder::SpatialFeatureMap& z);

    const std::string& instance_id(std::size_t i) const { return instance_ids_[i]; }
    const std::string& model_id(std::size_t i) const { return model_ids_[i]; }
    std::span<const float> features(std::size_t i) const;
    std::span<float> mutable_features(std::size_t i);
    std::span<const float> all_features() const { return features_; }
    encoder::SpatialFeatureMap feature_map(std::size_t i) const;

    std::optional<std::size_t> find(const std::string& instance_id) const;
    std::vector<std::string> model_ids() const;
    std::vector<std::size_t> entries_of(const std::string& model_id) const;

    // ShapeMismatch unless the index grid matches what the encoder produces.
    void check_compatible(const encoder::EncoderConfig& config) const;

    friend bool operator==(const FeatureIndex& a, const FeatureIndex& b) {
        return a.header_ == b.header_ && a.instance_ids_ == b.instance_ids_ && a.model_ids_ == b.model_ids_ &&
               a.features_ == b.features_;
    }

private:
    IndexHeader header_;
    std::vector<std::string> instance_ids_;
    std::vector<std::string> model_ids_;
    std::vector<float> features_;
    std::unordered_map<std::string, std::size_t> by_instance_;
};

struct BuildOptions {
    training::Modality modality = training::Modality::Depth;
    double max_skip_fraction = 0.01;
    std::size_t batch_size = 8;
};

struct BuildReport {
    std::vector<std::string> skipped;  // instance ids that failed to load or encode
};

// One entry per non-query manifest instance. Entries that fail are skipped
// and logged; more than max_skip_fraction skipped raises TooManySkipped.
FeatureIndex build_index(const dataset::DatasetManifest& manifest, const encoder::Encoder& encoder,
                         const BuildOptions& options = {}, BuildReport* report = nullptr);

// Layout: "CRSPIDX1", u32 {version, C, Hf, Wf, count}, 32-byte encoder hash,
// u64 label table offset; per entry u32 instance and model label offsets and
// C*Hf*Wf float32; then the label table of u32-length-prefixed UTF-8 strings.
// All integers little-endian.
void save_index(const FeatureIndex& index, const std::filesystem::path& path);
std::vector<std::uint8_t> serialize_index(const FeatureIndex& index);

// Throws BadMagic, VersionMismatch, TruncatedFile, ShapeMismatch.
FeatureIndex load_index(const std::filesystem::path& path);
FeatureIndex deserialize_index(std::span<const std::uint8_t> bytes);

}  // namespace crisp::index
