#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "crisp/augment.hpp"
#include "crisp/dataset.hpp"
#include "crisp/encoder.hpp"
#include "crisp/loss.hpp"
#include "crisp/masking.hpp"
#include "crisp/rng.hpp"

namespace crisp::training {

// Image type stored on the database side: depth maps, or prints as an
// ablation.
enum class Modality { Depth, Print };

std::string to_string(Modality m);
Modality modality_from_string(const std::string& text);

struct TrainConfig {
    double tau = 0.07;
    int n_models_per_batch = 4;
    double learning_rate = 1e-4;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_epsilon = 1e-8;
    int steps = 2000;
    augment::Range<double> mask_area_fraction_range{0.25, 1.0};
    augment::AugmentConfig augment;
    std::uint64_t seed = 0;
    int checkpoint_every = 500;
    // Ablation switches.
    bool feature_masking = true;
    bool mask_query_print = true;
    Modality database_modality = Modality::Depth;

    void validate() const;
};

nlohmann::json to_json(const TrainConfig& c);

// Training instances held in memory, grouped by model.
class TrainingSet {
public:
    TrainingSet() = default;
    explicit TrainingSet(std::vector<dataset::ShoeInstance> instances);

    // Loads the instances whose split is train.
    static TrainingSet from_manifest(const dataset::DatasetManifest& manifest);

    const std::vector<std::string>& models() const { return models_; }
    const std::vector<std::size_t>& instances_of(const std::string& model) const { return by_model_.at(model); }
    const dataset::ShoeInstance& instance(std::size_t i) const { return instances_[i]; }
    std::size_t size() const { return instances_.size(); }

private:
    std::vector<dataset::ShoeInstance> instances_;
    std::vector<std::string> models_;
    std::map<std::string, std::vector<std::size_t>> by_model_;
};

struct PairRecord {
    const dataset::ShoeInstance* instance = nullptr;
    std::string model_id;
};

// N pairs from N/2 models, two instances each; one mask for the whole batch.
struct TrainBatch {
    std::vector<PairRecord> pairs;
    VisibilityMask mask;
    // Set when a model had a single instance and it was used twice.
    bool duplicated_instance = false;
};

TrainBatch build_batch(const TrainingSet& data, const TrainConfig& config, dataset::CanonicalFrame frame, Rng& rng);

struct LossReport {
    int step = 0;
    double loss_value = 0.0;
    double grad_norm = 0.0;
    double positives_per_anchor_mean = 0.0;
    int positives_per_anchor_min = 0;
    int positives_per_anchor_max = 0;
    bool skipped = false;  // empty mask or zero masked features
};

struct AdamState {
    std::vector<std::vector<float>> m;
    std::vector<std::vector<float>> v;
    std::int64_t t = 0;
};

// Holds the encoder and optimizer state for one training run.
class Trainer {
public:
    Trainer(encoder::EncoderConfig encoder_config, TrainConfig config);

    void initialize();
    // Restores weights, optimizer moments and step counter.
    void resume(const std::filesystem::path& checkpoint);
    void save_checkpoint(const std::filesystem::path& path) const;

    // Applies augmentation with rng, computes the loss and takes one optimizer
    // step.
    LossReport train_step(const TrainBatch& batch, Rng& rng);
    // Samples the batch for the current step from a stream derived from
    // (seed, step) and calls train_step.
    LossReport step(const TrainingSet& data);

    encoder::Encoder& encoder() { return encoder_; }
    const encoder::Encoder& encoder() const { return encoder_; }
    const TrainConfig& config() const { return config_; }
    int current_step() const { return step_; }
    int skipped_batches() const { return skipped_; }

private:
    void adam_update(double learning_rate);

    TrainConfig config_;
    encoder::Encoder encoder_;
    AdamState adam_;
    int step_ = 0;
    int skipped_ = 0;
};

struct TrainResult {
    std::filesystem::path checkpoint;
    std::filesystem::path loss_curve;
    std::vector<LossReport> reports;
};

// Runs config.steps steps (continuing from resume_from when given), writing
// periodic checkpoints, final.ckpt and loss_curve.csv into out_dir.
TrainResult train(const dataset::DatasetManifest& manifest, const encoder::EncoderConfig& encoder_config,
                  const TrainConfig& config, const std::filesystem::path& out_dir,
                  const std::optional<std::filesystem::path>& resume_from = std::nullopt);

}  // namespace crisp::training
