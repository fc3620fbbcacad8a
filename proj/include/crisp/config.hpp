#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "crisp/augment.hpp"
#include "crisp/dataset.hpp"
#include "crisp/encoder.hpp"
#include "crisp/metrics.hpp"
#include "crisp/retrieval.hpp"
#include "crisp/training.hpp"

namespace crisp::config {

struct DatasetSection {
    int n_models = 16;
    int instances_per_model = 2;
    double fraction_unseen = 0.0;
    double foreground_threshold = 0.05;
    double jitter_px = 2.0;
    int canonical_height = 384;
    int canonical_width = 192;
    std::uint64_t seed = 0;
};

struct RetrievalSection {
    int k = 100;
    bool feature_masking = true;
    bool mask_query_print = true;
    training::Modality database_modality = training::Modality::Depth;

    retrieval::RetrievalOptions options() const { return {feature_masking, mask_query_print}; }
};

struct ServiceSection {
    std::string host = "127.0.0.1";
    int port = 8080;
    int max_k = 500;
    std::size_t max_upload_bytes = 16u << 20;
    std::size_t lru_capacity = 64;
    std::string cors_origin = "*";
    int threads = 4;
};

struct AppConfig {
    DatasetSection dataset;
    augment::AugmentConfig augment;
    encoder::EncoderConfig encoder;
    training::TrainConfig training;
    RetrievalSection retrieval;
    metrics::MetricConfig metrics;
    ServiceSection service;

    // Runs every section's semantic checks (InvalidConfig).
    void validate() const;
    // Sets every seed in the file to the same value.
    void set_seed(std::uint64_t seed);
};

// Missing keys keep their defaults; unknown sections or keys, wrong types and
// out-of-range values throw InvalidConfig. The training section's augment
// settings are taken from the top-level augment section.
AppConfig parse_config(const nlohmann::json& j);
AppConfig load_config(const std::filesystem::path& path);
nlohmann::json to_json(const AppConfig& config);

}  // namespace crisp::config
