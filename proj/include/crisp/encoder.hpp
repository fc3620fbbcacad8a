#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "crisp/dataset.hpp"
#include "crisp/image.hpp"
#include "crisp/nn.hpp"

namespace crisp::encoder {

enum class Backbone { ReferenceResNetStyle, SmallCnn };

std::string to_string(Backbone b);
Backbone backbone_from_string(const std::string& text);

// Which input channel an image occupies; the other channel is zero.
enum class Channel { Depth = 0, Print = 1 };

struct EncoderConfig {
    Backbone backbone = Backbone::ReferenceResNetStyle;
    int feature_channels = 128;
    int downsample_factor = 32;
    std::vector<int> head_conv_channels{256, 128};
    int input_channels = 2;
    // Output widths of the five stride-2 blocks of the small backbone.
    std::vector<int> small_cnn_widths{16, 32, 64, 64, 128};
    dataset::CanonicalFrame frame;

    int grid_height() const { return frame.height / downsample_factor; }
    int grid_width() const { return frame.width / downsample_factor; }

    // Throws InvalidConfig.
    void validate() const;

    friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

nlohmann::json to_json(const EncoderConfig& config);
EncoderConfig encoder_config_from_json(const nlohmann::json& j);

// Encoder output z with shape [channels, height, width], channel outermost.
struct SpatialFeatureMap {
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<float> values;

    int cells() const { return height * width; }
    float& at(int c, int y, int x) { return values[(static_cast<std::size_t>(c) * height + y) * width + x]; }
    float at(int c, int y, int x) const { return values[(static_cast<std::size_t>(c) * height + y) * width + x]; }

    friend bool operator==(const SpatialFeatureMap&, const SpatialFeatureMap&) = default;
};

using Digest = std::array<std::uint8_t, 32>;
std::string to_hex(const Digest& d);
Digest sha256(std::span<const std::uint8_t> bytes);

struct NamedTensor {
    std::string name;
    nn::Shape shape;
    std::vector<float> values;
};

class Encoder {
public:
    // Builds the architecture without usable weights; encode() throws
    // UnloadedWeights until initialize() or load_weights() succeeds.
    explicit Encoder(EncoderConfig config);
    ~Encoder();
    Encoder(Encoder&&) noexcept;
    Encoder& operator=(Encoder&&) noexcept;

    const EncoderConfig& config() const { return config_; }
    bool loaded() const { return loaded_; }

    void initialize(std::uint64_t seed);

    // Inference; safe to call concurrently.
    SpatialFeatureMap encode(const Image& image, Channel channel) const;
    std::vector<SpatialFeatureMap> encode_batch(std::span<const Image* const> images, Channel channel) const;
    nn::Tensor infer(const nn::Tensor& input) const;

    // Training path: caches activations for backward().
    nn::Tensor forward(const nn::Tensor& input);
    void backward(const nn::Tensor& grad_features);
    std::vector<nn::Parameter*> parameters();
    std::vector<const nn::Parameter*> parameters() const;
    void zero_grad();
    void clear_cache();
    std::size_t parameter_count() const;

    // Stacks images into [n, 2, H, W] with each image in its channel.
    nn::Tensor make_input(std::span<const Image* const> images, std::span<const Channel> channels) const;

    // SHA-256 over all parameter values in declaration order.
    Digest weights_hash() const;
    // SHA-256 of the features produced for a fixed synthetic probe image.
    Digest probe_hash() const;

    // Checkpoint = format version + config echo + metadata + named float32
    // tensors. extra_tensors (e.g. optimizer moments) are stored alongside.
    void save_weights(const std::filesystem::path& path, const nlohmann::json& metadata = {},
                      std::span<const NamedTensor> extra_tensors = {}) const;
    // Requires the checkpoint config to equal this encoder's (ConfigMismatch).
    void load_weights(const std::filesystem::path& path);

    static Encoder from_checkpoint(const std::filesystem::path& path);

private:
    void check_input(const nn::Shape& shape) const;

    EncoderConfig config_;
    std::unique_ptr<nn::Sequential> net_;
    bool loaded_ = false;
};

struct CheckpointFile {
    std::uint32_t version = 0;
    EncoderConfig config;
    nlohmann::json metadata;
    std::string probe_hash_hex;
    std::vector<NamedTensor> tensors;
};

// Throws CorruptCheckpoint for a missing, truncated or malformed file.
CheckpointFile read_checkpoint(const std::filesystem::path& path);

inline constexpr std::uint32_t kCheckpointVersion = 1;

Image probe_image(dataset::CanonicalFrame frame);

}  // namespace crisp::encoder
