#include "crisp/index.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cstring>
#include <fstream>
#include <map>
#include <set>

#include "crisp/error.hpp"

namespace crisp::index {
namespace {

constexpr char kMagic[8] = {'C', 'R', 'S', 'P', 'I', 'D', 'X', '1'};
constexpr std::size_t kHeaderBytes = 8 + 5 * 4 + 32 + 8;

template <typename T>
void put(std::vector<std::uint8_t>& out, T v) {
    std::uint8_t b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    out.insert(out.end(), b, b + sizeof(T));
}

class Cursor {
public:
    explicit Cursor(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    template <typename T>
    T get() {
        T v;
        std::memcpy(&v, take(sizeof(T)), sizeof(T));
        return v;
    }
    const std::uint8_t* take(std::size_t n) {
        if (n > bytes_.size() - at_) fail(ErrorCode::TruncatedFile, "index file is truncated");
        const std::uint8_t* p = bytes_.data() + at_;
        at_ += n;
        return p;
    }
    void seek(std::size_t at) {
        if (at > bytes_.size()) fail(ErrorCode::TruncatedFile, "index file is truncated");
        at_ = at;
    }
    std::size_t position() const { return at_; }
    std::size_t size() const { return bytes_.size(); }

private:
    std::span<const std::uint8_t> bytes_;
    std::size_t at_ = 0;
};

}  // namespace

void FeatureIndex::add(const std::string& instance_id, const std::string& model_id, std::span<const float> features) {
    if (features.size() != header_.entry_floats())
        fail(ErrorCode::ShapeMismatch, "index entry " + instance_id + " has " + std::to_string(features.size()) +
                                           " values, expected " + std::to_string(header_.entry_floats()));
    if (!by_instance_.emplace(instance_id, instance_ids_.size()).second)
        fail(ErrorCode::DuplicateInstanceId, "duplicate index entry " + instance_id);
    instance_ids_.push_back(instance_id);
    model_ids_.push_back(model_id);
    features_.insert(features_.end(), features.begin(), features.end());
}

void FeatureIndex::add(const std::string& instance_id, const std::string& model_id, const encoder::SpatialFeatureMap& z) {
    if (static_cast<std::uint32_t>(z.channels) != header_.channels ||
        static_cast<std::uint32_t>(z.height) != header_.grid_height ||
        static_cast<std::uint32_t>(z.width) != header_.grid_width)
        fail(ErrorCode::ShapeMismatch, "index entry " + instance_id + " has the wrong feature shape");
    add(instance_id, model_id, std::span<const float>(z.values));
}

std::span<const float> FeatureIndex::features(std::size_t i) const {
    const std::size_t n = header_.entry_floats();
    return {features_.data() + i * n, n};
}

std::span<float> FeatureIndex::mutable_features(std::size_t i) {
    const std::size_t n = header_.entry_floats();
    return {features_.data() + i * n, n};
}

encoder::SpatialFeatureMap FeatureIndex::feature_map(std::size_t i) const {
    const auto f = features(i);
    return {static_cast<int>(header_.channels), static_cast<int>(header_.grid_height),
            static_cast<int>(header_.grid_width), std::vector<float>(f.begin(), f.end())};
}

std::optional<std::size_t> FeatureIndex::find(const std::string& instance_id) const {
    const auto it = by_instance_.find(instance_id);
    if (it == by_instance_.end()) return std::nullopt;
    return it->second;
}

std::vector<std::string> FeatureIndex::model_ids() const {
    std::set<std::string> ids(model_ids_.begin(), model_ids_.end());
    return {ids.begin(), ids.end()};
}

std::vector<std::size_t> FeatureIndex::entries_of(const std::string& model_id) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < model_ids_.size(); ++i)
        if (model_ids_[i] == model_id) out.push_back(i);
    return out;
}

void FeatureIndex::check_compatible(const encoder::EncoderConfig& config) const {
    if (header_.channels != static_cast<std::uint32_t>(config.feature_channels) ||
        header_.grid_height != static_cast<std::uint32_t>(config.grid_height()) ||
        header_.grid_width != static_cast<std::uint32_t>(config.grid_width()))
        fail(ErrorCode::ShapeMismatch,
             "index features are " + std::to_string(header_.channels) + "x" + std::to_string(header_.grid_height) +
                 "x" + std::to_string(header_.grid_width) + " but the encoder produces " +
                 std::to_string(config.feature_channels) + "x" + std::to_string(config.grid_height()) + "x" +
                 std::to_string(config.grid_width()));
}

FeatureIndex build_index(const dataset::DatasetManifest& manifest, const encoder::Encoder& encoder,
                         const BuildOptions& options, BuildReport* report) {
    if (!encoder.loaded()) fail(ErrorCode::UnloadedWeights, "build_index needs loaded encoder weights");
    const auto& cfg = encoder.config();
    IndexHeader header;
    header.channels = static_cast<std::uint32_t>(cfg.feature_channels);
    header.grid_height = static_cast<std::uint32_t>(cfg.grid_height());
    header.grid_width = static_cast<std::uint32_t>(cfg.grid_width());
    header.encoder_hash = encoder.weights_hash();
    FeatureIndex index(header);

    std::vector<const dataset::ManifestEntry*> wanted;
    for (const auto& e : manifest.entries)
        if (e.split != dataset::Split::Query) wanted.push_back(&e);
    if (wanted.empty()) fail(ErrorCode::BadManifest, "manifest has no reference instances");

    const bool depth = options.modality == training::Modality::Depth;
    const auto channel = depth ? encoder::Channel::Depth : encoder::Channel::Print;
    std::vector<std::string> skipped;
    const std::size_t batch = std::max<std::size_t>(options.batch_size, 1);
    for (std::size_t b0 = 0; b0 < wanted.size(); b0 += batch) {
        std::vector<const dataset::ManifestEntry*> ok;
        std::vector<Image> images;
        for (std::size_t i = b0; i < std::min(wanted.size(), b0 + batch); ++i) {
            try {
                auto inst = dataset::load_instance(manifest, *wanted[i]);
                images.push_back(depth ? std::move(inst.depth) : std::move(inst.print));
                ok.push_back(wanted[i]);
            } catch (const Error& e) {
                spdlog::warn("build_index: skipping {}: {}", wanted[i]->instance_id, e.what());
                skipped.push_back(wanted[i]->instance_id);
            }
        }
        std::vector<const Image*> ptrs;
        for (const auto& img : images) ptrs.push_back(&img);
        const auto feats = encoder.encode_batch(ptrs, channel);
        for (std::size_t i = 0; i < ok.size(); ++i) index.add(ok[i]->instance_id, ok[i]->model_id, feats[i]);
    }
    if (static_cast<double>(skipped.size()) > options.max_skip_fraction * static_cast<double>(wanted.size()))
        fail(ErrorCode::TooManySkipped, "build_index skipped " + std::to_string(skipped.size()) + " of " +
                                            std::to_string(wanted.size()) + " instances");
    if (report) report->skipped = std::move(skipped);
    return index;
}

std::vector<std::uint8_t> serialize_index(const FeatureIndex& index) {
    const auto& h = index.header();
    const std::size_t n = index.count();

    std::vector<std::uint8_t> labels;
    std::map<std::string, std::uint32_t> offsets;
    auto label = [&](const std::string& s) {
        auto [it, inserted] = offsets.emplace(s, static_cast<std::uint32_t>(labels.size()));
        if (inserted) {
            put(labels, static_cast<std::uint32_t>(s.size()));
            labels.insert(labels.end(), s.begin(), s.end());
        }
        return it->second;
    };
    std::vector<std::pair<std::uint32_t, std::uint32_t>> entry_labels;
    for (std::size_t i = 0; i < n; ++i) {
        const auto a = label(index.instance_id(i));
        const auto b = label(index.model_id(i));
        entry_labels.emplace_back(a, b);
    }

    const std::size_t entry_bytes = 8 + h.entry_floats() * sizeof(float);
    const std::uint64_t table_offset = kHeaderBytes + n * entry_bytes;

    std::vector<std::uint8_t> out(kMagic, kMagic + 8);
    out.reserve(table_offset + labels.size());
    put(out, h.format_version);
    put(out, h.channels);
    put(out, h.grid_height);
    put(out, h.grid_width);
    put(out, static_cast<std::uint32_t>(n));
    out.insert(out.end(), h.encoder_hash.begin(), h.encoder_hash.end());
    put(out, table_offset);
    for (std::size_t i = 0; i < n; ++i) {
        put(out, entry_labels[i].first);
        put(out, entry_labels[i].second);
        const auto f = index.features(i);
        const auto* p = reinterpret_cast<const std::uint8_t*>(f.data());
        out.insert(out.end(), p, p + f.size_bytes());
    }
    out.insert(out.end(), labels.begin(), labels.end());
    return out;
}

void save_index(const FeatureIndex& index, const std::filesystem::path& path) {
    const auto bytes = serialize_index(index);
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!f) fail(ErrorCode::ImageIo, "cannot write " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

FeatureIndex deserialize_index(std::span<const std::uint8_t> bytes) {
    Cursor cur(bytes);
    if (bytes.size() < 8 || std::memcmp(bytes.data(), kMagic, 8) != 0)
        fail(ErrorCode::BadMagic, "not a feature index (bad magic)");
    cur.take(8);
    IndexHeader h;
    h.format_version = cur.get<std::uint32_t>();
    if (h.format_version != kIndexVersion)
        fail(ErrorCode::VersionMismatch, "index format version " + std::to_string(h.format_version) +
                                             " is not supported (expected " + std::to_string(kIndexVersion) + ")");
    h.channels = cur.get<std::uint32_t>();
    h.grid_height = cur.get<std::uint32_t>();
    h.grid_width = cur.get<std::uint32_t>();
    const auto count = cur.get<std::uint32_t>();
    std::memcpy(h.encoder_hash.data(), cur.take(32), 32);
    const auto table_offset = cur.get<std::uint64_t>();
    if (h.channels == 0 || h.grid_height == 0 || h.grid_width == 0)
        fail(ErrorCode::ShapeMismatch, "index header declares an empty feature shape");

    const std::size_t entry_bytes = 8 + h.entry_floats() * sizeof(float);
    if (table_offset != kHeaderBytes + static_cast<std::uint64_t>(count) * entry_bytes)
        fail(table_offset > bytes.size() ? ErrorCode::TruncatedFile : ErrorCode::ShapeMismatch,
             "index entry block does not match the header shape");
    if (table_offset > bytes.size()) fail(ErrorCode::TruncatedFile, "index file is truncated");

    Cursor table(bytes.subspan(table_offset));
    auto label_at = [&](std::uint32_t off) {
        table.seek(off);
        const auto len = table.get<std::uint32_t>();
        const auto* p = table.take(len);
        return std::string(reinterpret_cast<const char*>(p), len);
    };

    FeatureIndex index(h);
    std::vector<float> buf(h.entry_floats());
    std::size_t table_end = 0;
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto inst_off = cur.get<std::uint32_t>();
        const auto model_off = cur.get<std::uint32_t>();
        std::memcpy(buf.data(), cur.take(buf.size() * sizeof(float)), buf.size() * sizeof(float));
        const auto inst = label_at(inst_off);
        table_end = std::max(table_end, table.position());
        const auto model = label_at(model_off);
        table_end = std::max(table_end, table.position());
        index.add(inst, model, buf);
    }
    if (table_offset + table_end != bytes.size())
        fail(ErrorCode::TruncatedFile, "index file has " + std::to_string(bytes.size()) + " bytes, expected " +
                                           std::to_string(table_offset + table_end));
    return index;
}

FeatureIndex load_index(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) fail(ErrorCode::InvalidArgument, "cannot open index " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return deserialize_index(bytes);
}

}  // namespace crisp::index
