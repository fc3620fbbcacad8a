#include "crisp/encoder.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "crisp/error.hpp"

namespace crisp::encoder {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'C', 'R', 'S', 'P', 'C', 'K', 'P', 'T'};

void build_small_cnn(nn::Sequential& net, const EncoderConfig& c, Rng& rng) {
    int in = c.input_channels;
    for (std::size_t i = 0; i < c.small_cnn_widths.size(); ++i) {
        const int out = c.small_cnn_widths[i];
        auto& conv = net.add<nn::Conv2d>("backbone.block" + std::to_string(i), in, out, 3, 2, 1, true);
        conv.init_he(rng);
        if (i == 0) conv.set_needs_input_grad(false);
        net.add<nn::ReLU>();
        in = out;
    }
}

void build_resnet(nn::Sequential& net, const EncoderConfig& c, Rng& rng) {
    auto& stem = net.add<nn::Conv2d>("backbone.stem", c.input_channels, 64, 7, 2, 3, false);
    stem.init_he(rng);
    stem.set_needs_input_grad(false);
    net.add<nn::ChannelAffine>("backbone.stem_affine", 64);
    net.add<nn::ReLU>();
    net.add<nn::MaxPool2d>(3, 2, 1);
    struct Stage {
        int mid;
        int out;
        int blocks;
        int stride;
    };
    constexpr Stage stages[] = {{64, 256, 3, 1}, {128, 512, 4, 2}, {256, 1024, 6, 2}, {512, 2048, 3, 2}};
    int in = 64;
    for (int s = 0; s < 4; ++s) {
        for (int b = 0; b < stages[s].blocks; ++b) {
            const std::string name = "backbone.layer" + std::to_string(s + 1) + "." + std::to_string(b);
            net.add<nn::Bottleneck>(name, in, stages[s].mid, stages[s].out, b == 0 ? stages[s].stride : 1, rng);
            in = stages[s].out;
        }
    }
}

int backbone_out_channels(const EncoderConfig& c) {
    return c.backbone == Backbone::SmallCnn ? c.small_cnn_widths.back() : 2048;
}

std::unique_ptr<nn::Sequential> build_network(const EncoderConfig& c, std::uint64_t seed) {
    Rng rng(seed);
    auto net = std::make_unique<nn::Sequential>();
    if (c.backbone == Backbone::SmallCnn)
        build_small_cnn(*net, c, rng);
    else
        build_resnet(*net, c, rng);
    int in = backbone_out_channels(c);
    for (std::size_t i = 0; i < c.head_conv_channels.size(); ++i) {
        const bool last = i + 1 == c.head_conv_channels.size();
        auto& conv = net->add<nn::Conv2d>("head.conv" + std::to_string(i), in, c.head_conv_channels[i], 3, 1, 1, true);
        conv.init_he(rng, last ? 1.0 : 2.0);
        if (!last) net->add<nn::ReLU>();
        in = c.head_conv_channels[i];
    }
    return net;
}

void put_u32(std::string& out, std::uint32_t v) {
    char b[4];
    std::memcpy(b, &v, 4);
    out.append(b, 4);
}

class Reader {
public:
    explicit Reader(std::string bytes) : bytes_(std::move(bytes)) {}

    std::uint32_t u32() {
        std::uint32_t v;
        std::memcpy(&v, take(4), 4);
        return v;
    }
    std::string str(std::size_t n) { return {take(n), n}; }
    void floats(float* dst, std::size_t n) { std::memcpy(dst, take(n * sizeof(float)), n * sizeof(float)); }
    bool done() const { return at_ == bytes_.size(); }

private:
    const char* take(std::size_t n) {
        if (n > bytes_.size() - at_) fail(ErrorCode::CorruptCheckpoint, "checkpoint is truncated");
        const char* p = bytes_.data() + at_;
        at_ += n;
        return p;
    }

    std::string bytes_;
    std::size_t at_ = 0;
};

}  // namespace

std::string to_string(Backbone b) {
    return b == Backbone::SmallCnn ? "small_cnn" : "reference_resnet_style";
}

Backbone backbone_from_string(const std::string& text) {
    if (text == "small_cnn") return Backbone::SmallCnn;
    if (text == "reference_resnet_style") return Backbone::ReferenceResNetStyle;
    fail(ErrorCode::InvalidConfig, "unknown backbone '" + text + "'");
}

void EncoderConfig::validate() const {
    if (input_channels != 2) fail(ErrorCode::InvalidConfig, "encoder.input_channels must be 2");
    if (feature_channels < 1) fail(ErrorCode::InvalidConfig, "encoder.feature_channels must be >= 1");
    if (head_conv_channels.empty() || head_conv_channels.back() != feature_channels)
        fail(ErrorCode::InvalidConfig, "encoder.head_conv_channels must end with feature_channels");
    for (int c : head_conv_channels)
        if (c < 1) fail(ErrorCode::InvalidConfig, "encoder.head_conv_channels entries must be positive");
    if (downsample_factor < 1 || frame.height % downsample_factor != 0 || frame.width % downsample_factor != 0)
        fail(ErrorCode::InvalidConfig, "canonical frame must be divisible by encoder.downsample_factor");
    if (backbone == Backbone::ReferenceResNetStyle && downsample_factor != 32)
        fail(ErrorCode::InvalidConfig, "reference_resnet_style downsamples by exactly 32");
    if (backbone == Backbone::SmallCnn) {
        if (small_cnn_widths.empty()) fail(ErrorCode::InvalidConfig, "encoder.small_cnn_widths must be non-empty");
        if ((1 << small_cnn_widths.size()) != downsample_factor)
            fail(ErrorCode::InvalidConfig, "small_cnn has one stride-2 block per factor of 2 in downsample_factor");
        for (int w : small_cnn_widths)
            if (w < 1) fail(ErrorCode::InvalidConfig, "encoder.small_cnn_widths entries must be positive");
    }
}

json to_json(const EncoderConfig& c) {
    return json{{"backbone", to_string(c.backbone)},
                {"feature_channels", c.feature_channels},
                {"downsample_factor", c.downsample_factor},
                {"head_conv_channels", c.head_conv_channels},
                {"input_channels", c.input_channels},
                {"small_cnn_widths", c.small_cnn_widths},
                {"canonical_height", c.frame.height},
                {"canonical_width", c.frame.width}};
}

EncoderConfig encoder_config_from_json(const json& j) {
    EncoderConfig c;
    c.backbone = backbone_from_string(j.at("backbone").get<std::string>());
    c.feature_channels = j.at("feature_channels").get<int>();
    c.downsample_factor = j.at("downsample_factor").get<int>();
    c.head_conv_channels = j.at("head_conv_channels").get<std::vector<int>>();
    c.input_channels = j.at("input_channels").get<int>();
    c.small_cnn_widths = j.at("small_cnn_widths").get<std::vector<int>>();
    c.frame.height = j.at("canonical_height").get<int>();
    c.frame.width = j.at("canonical_width").get<int>();
    return c;
}

std::string to_hex(const Digest& d) {
    static constexpr char digits[] = "0123456789abcdef";
    std::string out;
    out.reserve(64);
    for (std::uint8_t b : d) {
        out.push_back(digits[b >> 4]);
        out.push_back(digits[b & 15]);
    }
    return out;
}

Digest sha256(std::span<const std::uint8_t> bytes) {
    Digest d{};
    unsigned int len = 0;
    EVP_Digest(bytes.data(), bytes.size(), d.data(), &len, EVP_sha256(), nullptr);
    return d;
}

Image probe_image(dataset::CanonicalFrame frame) {
    Image img(frame.height, frame.width);
    for (int y = 0; y < frame.height; ++y)
        for (int x = 0; x < frame.width; ++x)
            img.at(y, x) = static_cast<float>(0.5 + 0.25 * std::sin(0.37 * y) + 0.25 * std::cos(0.53 * x + 0.11 * y));
    return img;
}

Encoder::Encoder(EncoderConfig config) : config_(std::move(config)) {
    config_.validate();
    net_ = build_network(config_, 0);
}

Encoder::~Encoder() = default;
Encoder::Encoder(Encoder&&) noexcept = default;
Encoder& Encoder::operator=(Encoder&&) noexcept = default;

void Encoder::initialize(std::uint64_t seed) {
    net_ = build_network(config_, seed);
    loaded_ = true;
}

void Encoder::check_input(const nn::Shape& s) const {
    if (s.c != config_.input_channels || s.h != config_.frame.height || s.w != config_.frame.width)
        fail(ErrorCode::ShapeMismatch, "encoder input must be [n, " + std::to_string(config_.input_channels) + ", " +
                                           std::to_string(config_.frame.height) + ", " +
                                           std::to_string(config_.frame.width) + "]");
}

nn::Tensor Encoder::make_input(std::span<const Image* const> images, std::span<const Channel> channels) const {
    if (images.size() != channels.size()) fail(ErrorCode::ShapeMismatch, "one channel per image required");
    nn::Tensor t({static_cast<int>(images.size()), config_.input_channels, config_.frame.height, config_.frame.width});
    const std::size_t plane = t.shape.plane();
    for (std::size_t i = 0; i < images.size(); ++i) {
        const Image& img = *images[i];
        if (img.height() != config_.frame.height || img.width() != config_.frame.width)
            fail(ErrorCode::ShapeMismatch, "image is not in the canonical frame");
        float* dst = t.sample(static_cast<int>(i)) + static_cast<std::size_t>(channels[i]) * plane;
        std::copy(img.pixels().begin(), img.pixels().end(), dst);
    }
    return t;
}

nn::Tensor Encoder::infer(const nn::Tensor& input) const {
    if (!loaded_) fail(ErrorCode::UnloadedWeights, "encoder weights are not loaded");
    check_input(input.shape);
    return net_->infer(input);
}

SpatialFeatureMap Encoder::encode(const Image& image, Channel channel) const {
    const Image* ptr = &image;
    return encode_batch(std::span<const Image* const>(&ptr, 1), channel).front();
}

std::vector<SpatialFeatureMap> Encoder::encode_batch(std::span<const Image* const> images, Channel channel) const {
    constexpr std::size_t kChunk = 8;
    std::vector<SpatialFeatureMap> out;
    out.reserve(images.size());
    for (std::size_t start = 0; start < images.size(); start += kChunk) {
        const std::size_t n = std::min(kChunk, images.size() - start);
        const std::vector<Channel> channels(n, channel);
        const nn::Tensor z = infer(make_input(images.subspan(start, n), channels));
        for (std::size_t i = 0; i < n; ++i) {
            SpatialFeatureMap f{z.shape.c, z.shape.h, z.shape.w, {}};
            const float* src = z.sample(static_cast<int>(i));
            f.values.assign(src, src + static_cast<std::size_t>(z.shape.c) * z.shape.plane());
            out.push_back(std::move(f));
        }
    }
    return out;
}

nn::Tensor Encoder::forward(const nn::Tensor& input) {
    if (!loaded_) fail(ErrorCode::UnloadedWeights, "encoder weights are not loaded");
    check_input(input.shape);
    return net_->forward(input);
}

void Encoder::backward(const nn::Tensor& grad_features) { net_->backward(grad_features); }

std::vector<nn::Parameter*> Encoder::parameters() {
    std::vector<nn::Parameter*> out;
    net_->parameters(out);
    return out;
}

std::vector<const nn::Parameter*> Encoder::parameters() const {
    std::vector<nn::Parameter*> tmp;
    net_->parameters(tmp);
    return {tmp.begin(), tmp.end()};
}

void Encoder::zero_grad() {
    for (auto* p : parameters()) std::fill(p->grad.data.begin(), p->grad.data.end(), 0.0f);
}

void Encoder::clear_cache() { net_->clear_cache(); }

std::size_t Encoder::parameter_count() const {
    std::size_t n = 0;
    for (const auto* p : parameters()) n += p->value.data.size();
    return n;
}

Digest Encoder::weights_hash() const {
    std::vector<std::uint8_t> bytes;
    for (const auto* p : parameters()) {
        const auto* b = reinterpret_cast<const std::uint8_t*>(p->value.data.data());
        bytes.insert(bytes.end(), b, b + p->value.data.size() * sizeof(float));
    }
    return sha256(bytes);
}

Digest Encoder::probe_hash() const {
    const SpatialFeatureMap z = encode(probe_image(config_.frame), Channel::Depth);
    const auto* b = reinterpret_cast<const std::uint8_t*>(z.values.data());
    return sha256(std::span<const std::uint8_t>(b, z.values.size() * sizeof(float)));
}

void Encoder::save_weights(const std::filesystem::path& path, const json& metadata,
                           std::span<const NamedTensor> extra_tensors) const {
    if (!loaded_) fail(ErrorCode::UnloadedWeights, "cannot save an encoder without weights");
    std::string out(kMagic, sizeof kMagic);
    put_u32(out, kCheckpointVersion);
    const json header = {{"config", to_json(config_)},
                         {"metadata", metadata.is_null() ? json::object() : metadata},
                         {"probe_hash", to_hex(probe_hash())}};
    const std::string text = header.dump();
    put_u32(out, static_cast<std::uint32_t>(text.size()));
    out += text;

    const auto params = parameters();
    put_u32(out, static_cast<std::uint32_t>(params.size() + extra_tensors.size()));
    auto put_tensor = [&out](const std::string& name, const nn::Shape& s, std::span<const float> values) {
        put_u32(out, static_cast<std::uint32_t>(name.size()));
        out += name;
        for (int d : {s.n, s.c, s.h, s.w}) put_u32(out, static_cast<std::uint32_t>(d));
        out.append(reinterpret_cast<const char*>(values.data()), values.size() * sizeof(float));
    };
    for (const auto* p : params) put_tensor(p->name, p->value.shape, p->value.data);
    for (const auto& t : extra_tensors) put_tensor(t.name, t.shape, t.values);

    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) fail(ErrorCode::CorruptCheckpoint, "cannot write checkpoint " + path.string());
        f.write(out.data(), static_cast<std::streamsize>(out.size()));
    }
    std::filesystem::rename(tmp, path);
}

CheckpointFile read_checkpoint(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) fail(ErrorCode::CorruptCheckpoint, "cannot open checkpoint " + path.string());
    std::ostringstream buf;
    buf << f.rdbuf();
    Reader r(buf.str());
    if (r.str(sizeof kMagic) != std::string(kMagic, sizeof kMagic))
        fail(ErrorCode::CorruptCheckpoint, path.string() + " is not a checkpoint");
    CheckpointFile ck;
    ck.version = r.u32();
    if (ck.version != kCheckpointVersion)
        fail(ErrorCode::CorruptCheckpoint, "unsupported checkpoint version " + std::to_string(ck.version));
    try {
        const json header = json::parse(r.str(r.u32()));
        ck.config = encoder_config_from_json(header.at("config"));
        ck.metadata = header.at("metadata");
        ck.probe_hash_hex = header.at("probe_hash").get<std::string>();
    } catch (const json::exception& e) {
        fail(ErrorCode::CorruptCheckpoint, std::string("checkpoint header: ") + e.what());
    }
    const std::uint32_t count = r.u32();
    for (std::uint32_t i = 0; i < count; ++i) {
        NamedTensor t;
        t.name = r.str(r.u32());
        t.shape = {static_cast<int>(r.u32()), static_cast<int>(r.u32()), static_cast<int>(r.u32()),
                   static_cast<int>(r.u32())};
        t.values.resize(t.shape.size());
        r.floats(t.values.data(), t.values.size());
        ck.tensors.push_back(std::move(t));
    }
    if (!r.done()) fail(ErrorCode::CorruptCheckpoint, "trailing bytes in checkpoint");
    return ck;
}

void Encoder::load_weights(const std::filesystem::path& path) {
    CheckpointFile ck = read_checkpoint(path);
    if (!(ck.config == config_))
        fail(ErrorCode::ConfigMismatch, "checkpoint config " + to_json(ck.config).dump() +
                                            " does not match encoder config " + to_json(config_).dump());
    std::map<std::string, NamedTensor*> by_name;
    for (auto& t : ck.tensors) by_name[t.name] = &t;
    for (auto* p : parameters()) {
        auto it = by_name.find(p->name);
        if (it == by_name.end()) fail(ErrorCode::CorruptCheckpoint, "checkpoint lacks parameter " + p->name);
        if (!(it->second->shape == p->value.shape))
            fail(ErrorCode::CorruptCheckpoint, "parameter " + p->name + " has the wrong shape");
        p->value.data = std::move(it->second->values);
    }
    loaded_ = true;
    if (!ck.probe_hash_hex.empty() && to_hex(probe_hash()) != ck.probe_hash_hex) {
        loaded_ = false;
        fail(ErrorCode::CorruptCheckpoint, "probe output does not match the hash recorded in " + path.string());
    }
}

Encoder Encoder::from_checkpoint(const std::filesystem::path& path) {
    const CheckpointFile ck = read_checkpoint(path);
    Encoder enc(ck.config);
    enc.load_weights(path);
    return enc;
}

}  // namespace crisp::encoder
