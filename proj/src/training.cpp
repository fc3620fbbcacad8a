#include "crisp/training.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "crisp/error.hpp"

namespace crisp::training {

using nlohmann::json;

namespace {

constexpr std::uint64_t kStepStream = 0x7472616e;

std::string moment_name(const char* which, const std::string& param) {
    return std::string("optim.") + which + "." + param;
}

}  // namespace

std::string to_string(Modality m) { return m == Modality::Depth ? "depth" : "print"; }

Modality modality_from_string(const std::string& text) {
    if (text == "depth") return Modality::Depth;
    if (text == "print") return Modality::Print;
    fail(ErrorCode::InvalidConfig, "unknown modality '" + text + "'");
}

void TrainConfig::validate() const {
    if (!(tau > 0.0) || !std::isfinite(tau)) fail(ErrorCode::InvalidConfig, "training.tau must be positive");
    if (n_models_per_batch < 2) fail(ErrorCode::InvalidConfig, "training.n_models_per_batch must be >= 2");
    if (!(learning_rate >= 0.0)) fail(ErrorCode::InvalidConfig, "training.learning_rate must be >= 0");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0))
        fail(ErrorCode::InvalidConfig, "training adam betas must lie in [0, 1)");
    if (!(adam_epsilon > 0.0)) fail(ErrorCode::InvalidConfig, "training.adam_epsilon must be positive");
    if (steps < 0) fail(ErrorCode::InvalidConfig, "training.steps must be >= 0");
    if (checkpoint_every < 0) fail(ErrorCode::InvalidConfig, "training.checkpoint_every must be >= 0");
    const auto& r = mask_area_fraction_range;
    if (!(r.lo > 0.0 && r.lo <= r.hi && r.hi <= 1.0))
        fail(ErrorCode::InvalidConfig, "training.mask_area_fraction_range must satisfy 0 < lo <= hi <= 1");
    augment.validate();
}

json to_json(const TrainConfig& c) {
    const auto& a = c.augment;
    return json{{"tau", c.tau},
                {"n_models_per_batch", c.n_models_per_batch},
                {"learning_rate", c.learning_rate},
                {"adam_beta1", c.adam_beta1},
                {"adam_beta2", c.adam_beta2},
                {"adam_epsilon", c.adam_epsilon},
                {"steps", c.steps},
                {"mask_area_fraction_range", {c.mask_area_fraction_range.lo, c.mask_area_fraction_range.hi}},
                {"seed", c.seed},
                {"checkpoint_every", c.checkpoint_every},
                {"feature_masking", c.feature_masking},
                {"mask_query_print", c.mask_query_print},
                {"database_modality", to_string(c.database_modality)},
                {"augment",
                 {{"p_occlusion", a.p_occlusion},
                  {"p_erasure", a.p_erasure},
                  {"p_noise", a.p_noise},
                  {"overlap_rotation_range", a.overlap_rotation_range},
                  {"overlap_translation_range", a.overlap_translation_range},
                  {"quad_count_range", {a.quad_count_range.lo, a.quad_count_range.hi}},
                  {"quad_size_range", {a.quad_size_range.lo, a.quad_size_range.hi}},
                  {"erase_fraction_range", {a.erase_fraction_range.lo, a.erase_fraction_range.hi}},
                  {"noise_amplitude_range", {a.noise_amplitude_range.lo, a.noise_amplitude_range.hi}},
                  {"gaussian_weight", a.gaussian_weight},
                  {"perlin_weight", a.perlin_weight},
                  {"perlin_octaves", a.perlin_octaves},
                  {"perlin_base_scale", a.perlin_base_scale},
                  {"gaussian_sigma", a.gaussian_sigma}}}};
}

TrainingSet::TrainingSet(std::vector<dataset::ShoeInstance> instances) : instances_(std::move(instances)) {
    for (std::size_t i = 0; i < instances_.size(); ++i) by_model_[instances_[i].model_id].push_back(i);
    for (const auto& [model, _] : by_model_) models_.push_back(model);
}

TrainingSet TrainingSet::from_manifest(const dataset::DatasetManifest& manifest) {
    std::vector<dataset::ShoeInstance> out;
    for (const auto& e : manifest.entries)
        if (e.split == dataset::Split::Train) out.push_back(dataset::load_instance(manifest, e));
    return TrainingSet(std::move(out));
}

TrainBatch build_batch(const TrainingSet& data, const TrainConfig& config, dataset::CanonicalFrame frame, Rng& rng) {
    const auto& models = data.models();
    const auto n = static_cast<std::size_t>(config.n_models_per_batch);
    if (models.size() < n)
        fail(ErrorCode::InsufficientModels, "need " + std::to_string(n) + " trainable models, have " +
                                                std::to_string(models.size()));

    // Partial Fisher-Yates: the first n slots become a uniform sample.
    std::vector<std::size_t> order(models.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t i = 0; i < n; ++i) std::swap(order[i], order[i + rng.below(order.size() - i)]);

    TrainBatch batch;
    for (std::size_t i = 0; i < n; ++i) {
        const std::string& model = models[order[i]];
        const auto& members = data.instances_of(model);
        std::size_t a = members[rng.below(members.size())];
        std::size_t b = a;
        if (members.size() >= 2) {
            std::size_t j = rng.below(members.size() - 1);
            if (members[j] == a) j = members.size() - 1;
            b = members[j];
        } else {
            batch.duplicated_instance = true;
            spdlog::warn("model {} has a single training instance; using it twice", model);
        }
        batch.pairs.push_back({&data.instance(a), model});
        batch.pairs.push_back({&data.instance(b), model});
    }
    batch.mask = masking::sample_rect_mask(rng, config.mask_area_fraction_range, frame);
    return batch;
}

Trainer::Trainer(encoder::EncoderConfig encoder_config, TrainConfig config)
    : config_(std::move(config)), encoder_(std::move(encoder_config)) {
    config_.validate();
}

void Trainer::initialize() {
    encoder_.initialize(config_.seed);
    adam_ = AdamState{};
    for (const auto* p : encoder_.parameters()) {
        adam_.m.emplace_back(p->value.data.size(), 0.0f);
        adam_.v.emplace_back(p->value.data.size(), 0.0f);
    }
    step_ = 0;
    skipped_ = 0;
}

void Trainer::resume(const std::filesystem::path& checkpoint) {
    encoder_.load_weights(checkpoint);
    const auto file = encoder::read_checkpoint(checkpoint);
    std::map<std::string, const encoder::NamedTensor*> by_name;
    for (const auto& t : file.tensors) by_name[t.name] = &t;

    adam_ = AdamState{};
    for (const auto* p : encoder_.parameters()) {
        for (const char* which : {"m", "v"}) {
            const auto it = by_name.find(moment_name(which, p->name));
            if (it == by_name.end() || it->second->values.size() != p->value.data.size())
                fail(ErrorCode::CorruptCheckpoint, "checkpoint lacks optimizer state for " + p->name);
            (which[0] == 'm' ? adam_.m : adam_.v).push_back(it->second->values);
        }
    }
    const auto& meta = file.metadata;
    if (!meta.contains("step") || !meta.contains("adam_t"))
        fail(ErrorCode::CorruptCheckpoint, "checkpoint lacks training step metadata");
    step_ = meta.at("step").get<int>();
    adam_.t = meta.at("adam_t").get<std::int64_t>();
    skipped_ = meta.value("skipped_batches", 0);
}

void Trainer::save_checkpoint(const std::filesystem::path& path) const {
    std::vector<encoder::NamedTensor> extra;
    const auto params = encoder_.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) {
        extra.push_back({moment_name("m", params[i]->name), params[i]->value.shape, adam_.m[i]});
        extra.push_back({moment_name("v", params[i]->name), params[i]->value.shape, adam_.v[i]});
    }
    const json meta{{"step", step_},
                    {"adam_t", adam_.t},
                    {"skipped_batches", skipped_},
                    {"train_config", to_json(config_)}};
    encoder_.save_weights(path, meta, extra);
}

LossReport Trainer::train_step(const TrainBatch& batch, Rng& rng) {
    const auto& enc_cfg = encoder_.config();
    const int pairs = static_cast<int>(batch.pairs.size());
    LossReport report;
    report.step = step_;

    std::vector<Image> images;
    std::vector<encoder::Channel> channels;
    images.reserve(2 * pairs);
    for (const auto& rec : batch.pairs) {
        const auto& inst = *rec.instance;
        if (config_.database_modality == Modality::Depth) {
            images.push_back(inst.depth);
            channels.push_back(encoder::Channel::Depth);
        } else {
            images.push_back(inst.print);
            channels.push_back(encoder::Channel::Print);
        }
        Image query = augment::augment(inst.print, config_.augment, rng).first;
        if (config_.mask_query_print) query = apply_pixel_mask(query, batch.mask);
        images.push_back(std::move(query));
        channels.push_back(encoder::Channel::Print);
    }
    std::vector<const Image*> ptrs;
    for (const auto& img : images) ptrs.push_back(&img);

    const nn::Tensor input = encoder_.make_input(ptrs, channels);
    const nn::Tensor z = encoder_.forward(input);
    const int c = z.shape.c;
    const std::size_t per_sample = static_cast<std::size_t>(c) * z.shape.plane();

    const masking::CellMask cells = config_.feature_masking
                                        ? masking::downsample_mask(batch.mask, enc_cfg.grid_height(), enc_cfg.grid_width())
                                        : masking::CellMask::full(enc_cfg.grid_height(), enc_cfg.grid_width());

    const int rows = 2 * pairs;
    FeatureMatrix features(rows, static_cast<int>(per_sample));
    std::vector<std::string> labels;
    try {
        for (int i = 0; i < rows; ++i) {
            const auto zbar = masking::mask_features(std::span<const float>(z.sample(i), per_sample), c, cells);
            std::copy(zbar.begin(), zbar.end(), features.row(i).begin());
            labels.push_back(batch.pairs[i / 2].model_id);
        }
    } catch (const Error& e) {
        if (e.code() != ErrorCode::EmptyMask && e.code() != ErrorCode::ZeroVector) throw;
        encoder_.clear_cache();
        ++skipped_;
        ++step_;
        report.skipped = true;
        spdlog::warn("step {}: batch skipped ({}); {} skipped so far", report.step, e.what(), skipped_);
        return report;
    }

    const SupConResult result = supcon_loss_with_grad(features, labels, config_.tau);
    if (!std::isfinite(result.loss)) fail(ErrorCode::InvalidArgument, "loss is not finite");

    nn::Tensor grad(z.shape);
    for (int i = 0; i < rows; ++i) {
        const auto dz = masking::mask_features_backward(std::span<const float>(z.sample(i), per_sample), c, cells,
                                                        features.row(i), result.grad.row(i));
        float* g = grad.sample(i);
        for (std::size_t k = 0; k < per_sample; ++k) g[k] = static_cast<float>(dz[k]);
    }

    encoder_.zero_grad();
    encoder_.backward(grad);

    double norm2 = 0.0;
    for (const auto* p : encoder_.parameters())
        for (float g : p->grad.data) norm2 += static_cast<double>(g) * g;

    adam_update(config_.learning_rate);

    std::map<std::string, int> counts;
    for (const auto& l : labels) ++counts[l];
    int lo = rows, hi = 0;
    double sum = 0.0;
    for (const auto& l : labels) {
        const int p = counts[l] - 1;
        lo = std::min(lo, p);
        hi = std::max(hi, p);
        sum += p;
    }
    report.loss_value = result.loss;
    report.grad_norm = std::sqrt(norm2);
    report.positives_per_anchor_min = lo;
    report.positives_per_anchor_max = hi;
    report.positives_per_anchor_mean = sum / rows;
    ++step_;
    return report;
}

LossReport Trainer::step(const TrainingSet& data) {
    Rng rng = Rng::derive(config_.seed, static_cast<std::uint64_t>(step_), kStepStream);
    const TrainBatch batch = build_batch(data, config_, encoder_.config().frame, rng);
    return train_step(batch, rng);
}

void Trainer::adam_update(double learning_rate) {
    ++adam_.t;
    const double b1 = config_.adam_beta1;
    const double b2 = config_.adam_beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(adam_.t));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(adam_.t));
    const double eps = config_.adam_epsilon;
    auto params = encoder_.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& w = params[i]->value.data;
        const auto& g = params[i]->grad.data;
        auto& m = adam_.m[i];
        auto& v = adam_.v[i];
        for (std::size_t k = 0; k < w.size(); ++k) {
            const double gk = g[k];
            const double mk = b1 * m[k] + (1.0 - b1) * gk;
            const double vk = b2 * v[k] + (1.0 - b2) * gk * gk;
            m[k] = static_cast<float>(mk);
            v[k] = static_cast<float>(vk);
            const double delta = learning_rate * (mk / c1) / (std::sqrt(vk / c2) + eps);
            w[k] = static_cast<float>(w[k] - delta);
        }
    }
}

TrainResult train(const dataset::DatasetManifest& manifest, const encoder::EncoderConfig& encoder_config,
                  const TrainConfig& config, const std::filesystem::path& out_dir,
                  const std::optional<std::filesystem::path>& resume_from) {
    const TrainingSet data = TrainingSet::from_manifest(manifest);
    if (data.size() == 0) fail(ErrorCode::InsufficientModels, "manifest has no train split");

    Trainer trainer(encoder_config, config);
    if (resume_from)
        trainer.resume(*resume_from);
    else
        trainer.initialize();

    std::filesystem::create_directories(out_dir);
    TrainResult result;
    result.loss_curve = out_dir / "loss_curve.csv";
    result.checkpoint = out_dir / "final.ckpt";

    const bool append = resume_from.has_value() && std::filesystem::exists(result.loss_curve);
    std::ofstream csv(result.loss_curve, append ? std::ios::app : std::ios::trunc);
    if (!csv) fail(ErrorCode::ImageIo, "cannot write " + result.loss_curve.string());
    if (!append) csv << "step,loss,grad_norm\n";
    csv.precision(10);

    while (trainer.current_step() < config.steps) {
        const LossReport r = trainer.step(data);
        if (!r.skipped) csv << r.step << ',' << r.loss_value << ',' << r.grad_norm << '\n';
        if (r.step % 50 == 0) spdlog::info("step {} loss {:.4f} grad_norm {:.4f}", r.step, r.loss_value, r.grad_norm);
        result.reports.push_back(r);
        if (config.checkpoint_every > 0 && trainer.current_step() % config.checkpoint_every == 0 &&
            trainer.current_step() < config.steps) {
            char name[32];
            std::snprintf(name, sizeof name, "step_%06d.ckpt", trainer.current_step());
            trainer.save_checkpoint(out_dir / name);
        }
    }
    csv.flush();
    trainer.save_checkpoint(result.checkpoint);
    return result;
}

}  // namespace crisp::training
