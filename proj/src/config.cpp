#include "crisp/config.hpp"

#include <fstream>
#include <set>
#include <type_traits>

#include "crisp/error.hpp"

namespace crisp::config {

using nlohmann::json;

namespace {

class Section {
public:
    Section(const json& root, const std::string& name) : name_(name) {
        if (!root.contains(name)) return;
        node_ = &root.at(name);
        if (!node_->is_object()) fail(ErrorCode::InvalidConfig, "config section '" + name + "' must be an object");
    }

    template <typename T>
    void get(const std::string& key, T& out) {
        known_.insert(key);
        if (!node_ || !node_->contains(key)) return;
        out = convert<T>(node_->at(key), key);
    }

    template <typename T>
    void range(const std::string& key, augment::Range<T>& out) {
        known_.insert(key);
        if (!node_ || !node_->contains(key)) return;
        const json& v = node_->at(key);
        if (!v.is_array() || v.size() != 2) bad(key, "expected [lo, hi]");
        out.lo = convert<T>(v[0], key);
        out.hi = convert<T>(v[1], key);
    }

    const json* child(const std::string& key) {
        known_.insert(key);
        if (!node_ || !node_->contains(key)) return nullptr;
        return &node_->at(key);
    }

    void finish() const {
        if (!node_) return;
        for (const auto& [key, _] : node_->items())
            if (!known_.contains(key)) fail(ErrorCode::InvalidConfig, "unknown config key '" + name_ + "." + key + "'");
    }

    [[noreturn]] void bad(const std::string& key, const std::string& why) const {
        fail(ErrorCode::InvalidConfig, "config key '" + name_ + "." + key + "': " + why);
    }

    template <typename T>
    T convert(const json& v, const std::string& key) const {
        if constexpr (std::is_same_v<T, bool>) {
            if (!v.is_boolean()) bad(key, "expected a boolean");
            return v.get<bool>();
        } else if constexpr (std::is_same_v<T, std::string>) {
            if (!v.is_string()) bad(key, "expected a string");
            return v.get<std::string>();
        } else if constexpr (std::is_integral_v<T>) {
            if (!v.is_number_integer()) bad(key, "expected an integer");
            if constexpr (std::is_unsigned_v<T>) {
                if (v.is_number_unsigned()) return v.get<T>();
                if (v.get<std::int64_t>() < 0) bad(key, "expected a non-negative integer");
            }
            return v.get<T>();
        } else if constexpr (std::is_floating_point_v<T>) {
            if (!v.is_number()) bad(key, "expected a number");
            return v.get<T>();
        } else if constexpr (std::is_same_v<T, std::vector<int>>) {
            if (!v.is_array()) bad(key, "expected a list of integers");
            std::vector<int> out;
            for (const auto& e : v) out.push_back(convert<int>(e, key));
            return out;
        } else {
            static_assert(sizeof(T) == 0, "unsupported config type");
        }
    }

private:
    std::string name_;
    const json* node_ = nullptr;
    std::set<std::string> known_;
};

void read_augment(const json& root, augment::AugmentConfig& a) {
    Section s(root, "augment");
    s.get("p_occlusion", a.p_occlusion);
    s.get("p_erasure", a.p_erasure);
    s.get("p_noise", a.p_noise);
    s.get("overlap_rotation_range", a.overlap_rotation_range);
    s.get("overlap_translation_range", a.overlap_translation_range);
    s.range("quad_count_range", a.quad_count_range);
    s.range("quad_size_range", a.quad_size_range);
    s.range("erase_fraction_range", a.erase_fraction_range);
    s.range("noise_amplitude_range", a.noise_amplitude_range);
    if (const json* w = s.child("field_kind_weights")) {
        json wrapper{{"field_kind_weights", *w}};
        Section ws(wrapper, "field_kind_weights");
        ws.get("gaussian", a.gaussian_weight);
        ws.get("perlin", a.perlin_weight);
        ws.finish();
    }
    s.get("perlin_octaves", a.perlin_octaves);
    s.get("perlin_base_scale", a.perlin_base_scale);
    s.get("gaussian_sigma", a.gaussian_sigma);
    s.finish();
}

}  // namespace

void AppConfig::validate() const {
    const auto& d = dataset;
    if (d.n_models < 2) fail(ErrorCode::InvalidConfig, "dataset.n_models must be >= 2");
    if (d.instances_per_model < 2) fail(ErrorCode::InvalidConfig, "dataset.instances_per_model must be >= 2");
    if (!(d.fraction_unseen >= 0.0 && d.fraction_unseen < 1.0))
        fail(ErrorCode::InvalidConfig, "dataset.fraction_unseen must lie in [0, 1)");
    if (!(d.foreground_threshold >= 0.0 && d.foreground_threshold < 1.0))
        fail(ErrorCode::InvalidConfig, "dataset.foreground_threshold must lie in [0, 1)");
    if (d.jitter_px < 0.0) fail(ErrorCode::InvalidConfig, "dataset.jitter_px must be >= 0");
    if (d.canonical_height < 8 || d.canonical_width < 8)
        fail(ErrorCode::InvalidConfig, "dataset canonical size must be at least 8x8");
    augment.validate();
    encoder.validate();
    training.validate();
    if (retrieval.k < 1) fail(ErrorCode::InvalidConfig, "retrieval.k must be >= 1");
    metrics.validate();
    const auto& s = service;
    if (s.port < 0 || s.port > 65535) fail(ErrorCode::InvalidConfig, "service.port must lie in [0, 65535]");
    if (s.max_k < 1) fail(ErrorCode::InvalidConfig, "service.max_k must be >= 1");
    if (s.max_upload_bytes == 0) fail(ErrorCode::InvalidConfig, "service.max_upload_bytes must be positive");
    if (s.threads < 1) fail(ErrorCode::InvalidConfig, "service.threads must be >= 1");
}

void AppConfig::set_seed(std::uint64_t seed) {
    dataset.seed = seed;
    training.seed = seed;
}

AppConfig parse_config(const json& j) {
    if (!j.is_object()) fail(ErrorCode::InvalidConfig, "config must be a JSON object");
    static const std::set<std::string> sections{"dataset", "augment",  "encoder", "training",
                                                "retrieval", "metrics", "service"};
    for (const auto& [key, _] : j.items())
        if (!sections.contains(key)) fail(ErrorCode::InvalidConfig, "unknown config section '" + key + "'");

    AppConfig c;
    {
        Section s(j, "dataset");
        s.get("n_models", c.dataset.n_models);
        s.get("instances_per_model", c.dataset.instances_per_model);
        s.get("fraction_unseen", c.dataset.fraction_unseen);
        s.get("foreground_threshold", c.dataset.foreground_threshold);
        s.get("jitter_px", c.dataset.jitter_px);
        s.get("canonical_height", c.dataset.canonical_height);
        s.get("canonical_width", c.dataset.canonical_width);
        s.get("seed", c.dataset.seed);
        s.finish();
    }
    read_augment(j, c.augment);
    {
        Section s(j, "encoder");
        std::string backbone = encoder::to_string(c.encoder.backbone);
        s.get("backbone", backbone);
        c.encoder.backbone = encoder::backbone_from_string(backbone);
        s.get("feature_channels", c.encoder.feature_channels);
        s.get("downsample_factor", c.encoder.downsample_factor);
        s.get("head_conv_channels", c.encoder.head_conv_channels);
        s.get("input_channels", c.encoder.input_channels);
        s.get("small_cnn_widths", c.encoder.small_cnn_widths);
        s.finish();
        c.encoder.frame = {c.dataset.canonical_height, c.dataset.canonical_width};
    }
    {
        Section s(j, "training");
        auto& t = c.training;
        s.get("tau", t.tau);
        s.get("n_models_per_batch", t.n_models_per_batch);
        s.get("learning_rate", t.learning_rate);
        s.get("adam_beta1", t.adam_beta1);
        s.get("adam_beta2", t.adam_beta2);
        s.get("adam_epsilon", t.adam_epsilon);
        s.get("steps", t.steps);
        s.range("mask_area_fraction_range", t.mask_area_fraction_range);
        s.get("seed", t.seed);
        s.get("checkpoint_every", t.checkpoint_every);
        s.get("feature_masking", t.feature_masking);
        s.get("mask_query_print", t.mask_query_print);
        std::string modality = training::to_string(t.database_modality);
        s.get("database_modality", modality);
        t.database_modality = training::modality_from_string(modality);
        s.finish();
        t.augment = c.augment;
    }
    {
        Section s(j, "retrieval");
        s.get("k", c.retrieval.k);
        s.get("feature_masking", c.retrieval.feature_masking);
        s.get("mask_query_print", c.retrieval.mask_query_print);
        std::string modality = training::to_string(c.retrieval.database_modality);
        s.get("database_modality", modality);
        c.retrieval.database_modality = training::modality_from_string(modality);
        s.finish();
    }
    {
        Section s(j, "metrics");
        s.get("k", c.metrics.k);
        s.finish();
    }
    {
        Section s(j, "service");
        s.get("host", c.service.host);
        s.get("port", c.service.port);
        s.get("max_k", c.service.max_k);
        s.get("max_upload_bytes", c.service.max_upload_bytes);
        s.get("lru_capacity", c.service.lru_capacity);
        s.get("cors_origin", c.service.cors_origin);
        s.get("threads", c.service.threads);
        s.finish();
    }
    c.validate();
    return c;
}

AppConfig load_config(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) fail(ErrorCode::InvalidConfig, "cannot read config " + path.string());
    json j;
    try {
        j = json::parse(f);
    } catch (const json::exception& e) {
        fail(ErrorCode::InvalidConfig, "config " + path.string() + " is not valid JSON: " + e.what());
    }
    return parse_config(j);
}

json to_json(const AppConfig& c) {
    json training = training::to_json(c.training);
    json augment = training.at("augment");
    training.erase("augment");
    augment["field_kind_weights"] = {{"gaussian", augment.at("gaussian_weight")},
                                     {"perlin", augment.at("perlin_weight")}};
    augment.erase("gaussian_weight");
    augment.erase("perlin_weight");
    json encoder = encoder::to_json(c.encoder);
    encoder.erase("canonical_height");
    encoder.erase("canonical_width");
    return {{"dataset",
             {{"n_models", c.dataset.n_models},
              {"instances_per_model", c.dataset.instances_per_model},
              {"fraction_unseen", c.dataset.fraction_unseen},
              {"foreground_threshold", c.dataset.foreground_threshold},
              {"jitter_px", c.dataset.jitter_px},
              {"canonical_height", c.dataset.canonical_height},
              {"canonical_width", c.dataset.canonical_width},
              {"seed", c.dataset.seed}}},
            {"augment", augment},
            {"encoder", encoder},
            {"training", training},
            {"retrieval",
             {{"k", c.retrieval.k},
              {"feature_masking", c.retrieval.feature_masking},
              {"mask_query_print", c.retrieval.mask_query_print},
              {"database_modality", training::to_string(c.retrieval.database_modality)}}},
            {"metrics", {{"k", c.metrics.k}}},
            {"service",
             {{"host", c.service.host},
              {"port", c.service.port},
              {"max_k", c.service.max_k},
              {"max_upload_bytes", c.service.max_upload_bytes},
              {"lru_capacity", c.service.lru_capacity},
              {"cors_origin", c.service.cors_origin},
              {"threads", c.service.threads}}}};
}

}  // namespace crisp::config
