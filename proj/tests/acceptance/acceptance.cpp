// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. CRISP_ACCEPTANCE_STEPS overrides the end-to-end training
// length (default 500).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <optional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "crisp/augment.hpp"
#include "crisp/dataset.hpp"
#include "crisp/encoder.hpp"
#include "crisp/error.hpp"
#include "crisp/index.hpp"
#include "crisp/loss.hpp"
#include "crisp/masking.hpp"
#include "crisp/metrics.hpp"
#include "crisp/query_set.hpp"
#include "crisp/retrieval.hpp"
#include "crisp/training.hpp"
#include "../oracles/oracles.hpp"

using namespace crisp;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
    bool pass = false;
    std::string detail;
};

class ScratchDir {
public:
    explicit ScratchDir(const std::string& tag)
        : path_(fs::temp_directory_path() / ("crisp_accept_" + tag + "_" + std::to_string(std::random_device{}()))) {
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~ScratchDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    const fs::path& path() const { return path_; }

private:
    fs::path path_;
};

std::vector<float> random_floats(Rng& rng, std::size_t n) {
    std::vector<float> v(n);
    for (auto& x : v) x = static_cast<float>(rng.uniform(-1.0, 1.0));
    return v;
}

training::FeatureMatrix random_unit_rows(Rng& rng, int rows, int cols) {
    training::FeatureMatrix f(rows, cols);
    for (int i = 0; i < rows; ++i) {
        double n2 = 0.0;
        for (auto& x : f.row(i)) {
            x = rng.normal();
            n2 += x * x;
        }
        for (auto& x : f.row(i)) x /= std::sqrt(n2);
    }
    return f;
}

// Labels with at least two rows per class, shuffled.
std::vector<std::string> random_labels(Rng& rng, int rows) {
    const int classes = rng.uniform_int(1, rows / 2);
    std::vector<std::string> labels;
    for (int i = 0; i < rows; ++i) labels.push_back("L" + std::to_string(i < 2 * classes ? i / 2 : rng.below(classes)));
    for (int i = rows - 1; i > 0; --i) std::swap(labels[i], labels[rng.below(i + 1)]);
    return labels;
}

std::vector<std::vector<double>> to_rows(const training::FeatureMatrix& f) {
    std::vector<std::vector<double>> out;
    for (int i = 0; i < f.rows; ++i) out.emplace_back(f.row(i).begin(), f.row(i).end());
    return out;
}

// ---------------------------------------------------------------------------

Outcome metric_oracle() {
    const auto t0 = Clock::now();
    Rng rng(2024);
    int hit_mismatch = 0;
    double worst = 0.0;
    for (int trial = 0; trial < 1000; ++trial) {
        const int universe = rng.uniform_int(1, 150);
        std::vector<std::string> ranking;
        for (int i = 0; i < universe; ++i) ranking.push_back("M" + std::to_string(i));
        for (int i = universe - 1; i > 0; --i) std::swap(ranking[i], ranking[rng.below(i + 1)]);
        ranking.resize(std::min(universe, 100));
        std::set<std::string> pos;
        const int n = rng.uniform_int(1, std::min(4, universe));
        while (static_cast<int>(pos.size()) < n) pos.insert("M" + std::to_string(rng.below(universe)));
        for (int k : {1, 5, 100}) {
            if (metrics::hit_at_k(ranking, pos, k) != oracle::hit(ranking, pos, k)) ++hit_mismatch;
            const double got = *metrics::ap_at_k(ranking, pos, k, pos.size());
            worst = std::max(worst, std::abs(got - oracle::average_precision(ranking, pos, k, pos.size())));
        }
    }
    const double secs = seconds_since(t0);
    return {hit_mismatch == 0 && worst <= 1e-9 && secs < 10.0,
            fmt::format("1000 rankings, hit mismatches {}, max |dAP| {:.2e}, {:.2f} s", hit_mismatch, worst, secs)};
}

Outcome hand_ap_cases() {
    const std::vector<std::string> r{"A", "B", "C", "D", "E"};
    const double a = *metrics::ap_at_k(r, {"A"}, 5, 1);
    const double b = *metrics::ap_at_k(r, {"A", "C"}, 5, 2);
    const double c = *metrics::ap_at_k(r, {"B"}, 5, 3);
    const bool ok = std::abs(a - 1.0) <= 1e-4 && std::abs(b - 0.8333) <= 1e-4 && std::abs(c - 0.1667) <= 1e-4;
    return {ok, fmt::format("{:.4f} {:.4f} {:.4f}", a, b, c)};
}

Outcome loss_oracle() {
    Rng rng(77);
    const double taus[] = {0.05, 0.07, 0.1};
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const int rows = 2 * rng.uniform_int(2, 8);
        const int cols = rng.uniform_int(2, 32);
        const double tau = taus[trial % 3];
        const auto f = random_unit_rows(rng, rows, cols);
        const auto labels = random_labels(rng, rows);
        const double got = training::supcon_loss(f, labels, tau);
        worst = std::max(worst, std::abs(got - oracle::supcon(to_rows(f), labels, tau)));
    }
    double worst_closed = 0.0;
    for (int rows : {4, 8, 16}) {
        training::FeatureMatrix f(rows, 5);
        for (int i = 0; i < rows; ++i) f.row(i)[0] = 1.0;
        const std::vector<std::string> labels(rows, "same");
        const double expected = rows * std::log(rows - 1.0);
        worst_closed = std::max(worst_closed, std::abs(training::supcon_loss(f, labels, 0.07) - expected));
    }
    return {worst <= 1e-6 && worst_closed <= 1e-6,
            fmt::format("100 batches max |d| {:.2e}, closed form max |d| {:.2e}", worst, worst_closed)};
}

// Central differences in double on the loss alone. The perturbed rows are
// no longer unit length, so the norm check is relaxed for those evaluations.
Outcome gradient_check() {
    const auto t0 = Clock::now();
    Rng rng(31);
    constexpr double h = 1e-6;
    double worst = 0.0;
    for (int trial = 0; trial < 10; ++trial) {
        const int rows = 2 * rng.uniform_int(2, 4);
        const int cols = rng.uniform_int(3, 16);
        const double tau = 0.05 + 0.05 * rng.uniform();
        auto f = random_unit_rows(rng, rows, cols);
        const auto labels = random_labels(rng, rows);
        const auto res = training::supcon_loss_with_grad(f, labels, tau);
        for (std::size_t i = 0; i < f.values.size(); ++i) {
            const double saved = f.values[i];
            f.values[i] = saved + h;
            const double up = training::supcon_loss(f, labels, tau, 1.0);
            f.values[i] = saved - h;
            const double down = training::supcon_loss(f, labels, tau, 1.0);
            f.values[i] = saved;
            const double numeric = (up - down) / (2.0 * h);
            const double analytic = res.grad.values[i];
            const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
            worst = std::max(worst, std::abs(analytic - numeric) / denom);
        }
    }
    const double secs = seconds_since(t0);
    return {worst < 1e-3 && secs < 30.0, fmt::format("10 batches, max relative error {:.2e}, {:.2f} s", worst, secs)};
}

Outcome masking_invariants() {
    Rng rng(5);
    int failures = 0;
    double worst_norm = 0.0;
    int empty_raised = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const int channels = rng.uniform_int(1, 16);
        const int gh = rng.uniform_int(1, 12);
        const int gw = rng.uniform_int(1, 6);
        const int cells = gh * gw;
        masking::CellMask mask{gh, gw, std::vector<std::uint8_t>(cells, 0)};
        while (mask.count() == 0)
            for (auto& c : mask.cells) c = rng.bernoulli(0.5) ? 1 : 0;
        auto z = random_floats(rng, static_cast<std::size_t>(channels) * cells);
        const auto zbar = masking::mask_features(z, channels, mask);

        double n2 = 0.0;
        for (int c = 0; c < channels; ++c)
            for (int cell = 0; cell < cells; ++cell) {
                const double v = zbar[static_cast<std::size_t>(c) * cells + cell];
                n2 += v * v;
                if (!mask.cells[cell] && v != 0.0) ++failures;
            }
        worst_norm = std::max(worst_norm, std::abs(std::sqrt(n2) - 1.0));

        // Perturb a database entry outside the mask: its score must not move.
        const auto query = masking::mask_features(random_floats(rng, z.size()), channels, mask);
        index::IndexHeader header;
        header.channels = channels;
        header.grid_height = gh;
        header.grid_width = gw;
        index::FeatureIndex before(header), after(header);
        auto perturbed = z;
        for (int c = 0; c < channels; ++c)
            for (int cell = 0; cell < cells; ++cell)
                if (!mask.cells[cell]) perturbed[static_cast<std::size_t>(c) * cells + cell] += 10.0f * rng.uniform();
        before.add("e", "E", z);
        after.add("e", "E", perturbed);
        if (retrieval::score_entries(before, mask, query) != retrieval::score_entries(after, mask, query)) ++failures;
        if (masking::mask_features(perturbed, channels, mask) != zbar) ++failures;

        const masking::CellMask empty{gh, gw, std::vector<std::uint8_t>(cells, 0)};
        try {
            masking::mask_features(z, channels, empty);
        } catch (const Error& e) {
            if (e.code() == ErrorCode::EmptyMask) ++empty_raised;
        }
    }
    return {failures == 0 && worst_norm <= 1e-6 && empty_raised == 100,
            fmt::format("100 cases, violations {}, max |norm-1| {:.2e}, EmptyMask {}/100", failures, worst_norm,
                        empty_raised)};
}

Outcome brute_force_retrieval() {
    Rng rng(12);
    int order_mismatch = 0;
    double worst = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        const int channels = rng.uniform_int(2, 8);
        const int gh = rng.uniform_int(2, 6);
        const int gw = rng.uniform_int(2, 4);
        const int cells = gh * gw;
        index::IndexHeader header;
        header.channels = channels;
        header.grid_height = gh;
        header.grid_width = gw;
        index::FeatureIndex idx(header);
        std::vector<oracle::Entry> entries;
        const int models = rng.uniform_int(5, 60);
        for (int m = 0; m < models && entries.size() < 200; ++m) {
            const int n = rng.uniform_int(1, 4);
            for (int i = 0; i < n && entries.size() < 200; ++i) {
                entries.push_back({fmt::format("m{}_{}", m, i), fmt::format("M{:03d}", m),
                                   random_floats(rng, static_cast<std::size_t>(channels) * cells)});
                idx.add(entries.back().instance_id, entries.back().model_id, entries.back().features);
            }
        }
        masking::CellMask mask{gh, gw, std::vector<std::uint8_t>(cells, 0)};
        while (mask.count() == 0)
            for (auto& c : mask.cells) c = rng.bernoulli(0.6) ? 1 : 0;
        const auto query =
            masking::mask_features(random_floats(rng, static_cast<std::size_t>(channels) * cells), channels, mask);
        const int k = rng.uniform_int(1, models);
        const auto got = retrieval::rank_models(idx, retrieval::score_entries(idx, mask, query), k, "q");
        const auto want = oracle::rank(entries, query, channels, cells, mask.indices(), k);
        if (got.results.size() != want.size()) {
            ++order_mismatch;
            continue;
        }
        for (std::size_t i = 0; i < want.size(); ++i) {
            if (got.results[i].model_id != want[i].model_id ||
                got.results[i].best_instance_id != want[i].best_instance_id)
                ++order_mismatch;
            worst = std::max(worst, std::abs(got.results[i].score - want[i].score));
        }
    }
    return {order_mismatch == 0 && worst <= 1e-6,
            fmt::format("20 indices of <= 200 entries, ranking mismatches {}, max |dscore| {:.2e}", order_mismatch,
                        worst)};
}

Outcome augmentation_suite() {
    dataset::SyntheticOptions so;
    so.n_models = 4;
    so.frame = {128, 64};
    const auto instances = dataset::generate_synthetic_instances(so);
    const augment::AugmentConfig full;
    augment::AugmentConfig always = full;
    always.p_occlusion = always.p_erasure = always.p_noise = 1.0;
    int determinism = 0, monotone = 0, identity = 0, replay = 0;
    const int trials = 40;
    for (int t = 0; t < trials; ++t) {
        const Image& print = instances[t % instances.size()].print;
        const auto& cfg = (t % 2) ? always : full;
        Rng a(1000 + t), b(1000 + t);
        const auto [out_a, recipe_a] = augment::augment(print, cfg, a);
        const auto [out_b, recipe_b] = augment::augment(print, cfg, b);
        if (out_a == out_b && recipe_a == recipe_b) ++determinism;
        if (augment::apply_recipe(print, recipe_a, cfg) == out_a) ++replay;

        const auto field = augment::make_field(t % 2 ? augment::FieldKind::Perlin : augment::FieldKind::Gaussian,
                                               print.height(), print.width(), cfg, 500 + t);
        const Image erased = augment::erase(print, field, 0.2 + 0.5 * (t % 5) / 4.0);
        bool le = true;
        for (std::size_t p = 0; p < print.size(); ++p) le = le && erased.pixels()[p] <= print.pixels()[p];
        monotone += le ? 1 : 0;

        Rng c(t);
        if (augment::augment(print, augment::AugmentConfig::disabled(), c).first == print) ++identity;
    }
    return {determinism == trials && monotone == trials && identity == trials && replay == trials,
            fmt::format("{} seeds: deterministic {}, erasure monotone {}, identity {}, replay {}", trials, determinism,
                        monotone, identity, replay)};
}

Outcome index_round_trip() {
    ScratchDir dir("index");
    dataset::SyntheticOptions so;
    so.n_models = 6;
    so.frame = {128, 64};
    const auto manifest = dataset::generate_synthetic(so, dir.path() / "data");
    encoder::EncoderConfig ec;
    ec.backbone = encoder::Backbone::SmallCnn;
    ec.frame = so.frame;
    encoder::Encoder enc(ec);
    enc.initialize(3);
    const auto idx = index::build_index(manifest, enc);
    index::save_index(idx, dir.path() / "db.idx");
    const auto loaded = index::load_index(dir.path() / "db.idx");
    const bool same_features = loaded == idx;

    int same_results = 0;
    const auto instances = dataset::generate_synthetic_instances(so);
    Rng rng(8);
    for (int q = 0; q < 6; ++q) {
        retrieval::QuerySpec spec;
        spec.query_id = "q" + std::to_string(q);
        spec.print = instances[q].print;
        spec.mask = masking::sample_rect_mask(rng, {0.4, 1.0}, so.frame);
        spec.k = 5;
        if (retrieval::query(idx, enc, spec) == retrieval::query(loaded, enc, spec)) ++same_results;
    }
    return {same_features && same_results == 6,
            fmt::format("{} entries, features identical {}, identical query results {}/6", idx.count(),
                        same_features ? "yes" : "no", same_results)};
}

// ---------------------------------------------------------------------------
// End-to-end benchmark on the synthetic 16 x 2 set.

struct E2eSetup {
    fs::path root;
    dataset::DatasetManifest manifest;
    std::vector<retrieval::QuerySpec> queries;
    dataset::GroundTruthMap truth;
    encoder::EncoderConfig encoder;
    int steps = 500;
};

struct Scores {
    double hit = 0.0;
    double map = 0.0;
};

Scores evaluate_checkpoint(const E2eSetup& setup, const fs::path& checkpoint, training::Modality modality,
                           const retrieval::RetrievalOptions& options) {
    const auto enc = encoder::Encoder::from_checkpoint(checkpoint);
    index::BuildOptions bo;
    bo.modality = modality;
    const auto idx = index::build_index(setup.manifest, enc, bo);
    std::vector<retrieval::RankedResult> results;
    for (const auto& spec : setup.queries) results.push_back(retrieval::query(idx, enc, spec, options));
    const auto report = metrics::evaluate(results, setup.truth, metrics::MetricConfig{5});
    return {report.hit_at_k, report.map_at_k};
}

fs::path train_variant(const E2eSetup& setup, const std::string& name, const training::TrainConfig& cfg) {
    const auto t0 = Clock::now();
    const auto result = training::train(setup.manifest, setup.encoder, cfg, setup.root / name);
    spdlog::info("trained {} for {} steps in {:.0f} s, final loss {:.3f}", name, cfg.steps, seconds_since(t0),
                 result.reports.empty() ? 0.0 : result.reports.back().loss_value);
    return result.checkpoint;
}

training::TrainConfig base_train_config(const E2eSetup& setup) {
    training::TrainConfig cfg;
    cfg.steps = setup.steps;
    cfg.checkpoint_every = 0;
    cfg.seed = 1;
    return cfg;
}

}  // namespace

int main() {
    spdlog::set_level(spdlog::level::info);
    int failed = 0;
    auto report = [&](const std::string& name, const std::function<Outcome()>& check) {
        Outcome o;
        try {
            o = check();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        if (!o.pass) ++failed;
        std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << std::endl;
    };

    report("metric_oracle_equivalence", metric_oracle);
    report("hand_derived_ap_cases", hand_ap_cases);
    report("loss_oracle", loss_oracle);
    report("gradient_check", gradient_check);
    report("masking_invariants", masking_invariants);
    report("brute_force_retrieval_equivalence", brute_force_retrieval);
    report("augmentation_suite", augmentation_suite);
    report("index_round_trip", index_round_trip);

    ScratchDir dir("e2e");
    E2eSetup setup;
    setup.root = dir.path();
    if (const char* env = std::getenv("CRISP_ACCEPTANCE_STEPS")) setup.steps = std::atoi(env);
    dataset::SyntheticOptions so;
    so.n_models = 16;
    so.instances_per_model = 2;
    setup.manifest = dataset::generate_synthetic(so, setup.root / "data");
    setup.encoder.backbone = encoder::Backbone::SmallCnn;
    setup.encoder.frame = so.frame;
    {
        std::vector<dataset::ShoeInstance> sources;
        for (const auto& e : setup.manifest.entries) sources.push_back(dataset::load_instance(setup.manifest, e));
        query_set::QuerySetOptions qo;
        qo.count = 64;
        qo.mask_area_fraction = {0.4, 1.0};
        qo.seed = 11;
        qo.k = 5;
        setup.queries = query_set::make_queries(sources, qo, setup.truth);
    }

    std::optional<fs::path> main_ckpt;
    std::optional<Scores> main_scores;
    report("e2e_toy_benchmark", [&]() -> Outcome {
        main_ckpt = train_variant(setup, "main", base_train_config(setup));
        const Scores fm = evaluate_checkpoint(setup, *main_ckpt, training::Modality::Depth, {});
        main_scores = fm;
        retrieval::RetrievalOptions off;
        off.feature_masking = false;
        off.mask_query_print = false;
        const Scores nofm = evaluate_checkpoint(setup, *main_ckpt, training::Modality::Depth, off);
        const bool ok = fm.hit >= 0.9 && fm.map >= 0.6 && fm.map - nofm.map >= 0.05;
        return {ok, fmt::format("{} steps, 64 queries: hit@5 {:.4f}, mAP@5 {:.4f}; without masking mAP@5 {:.4f} "
                                "(gain {:+.4f}, need >= 0.05)",
                                setup.steps, fm.hit, fm.map, nofm.map, fm.map - nofm.map)};
    });

    report("ablation_toggles", [&]() -> Outcome {
        if (!main_scores) return {false, "main run did not complete"};
        auto print_cfg = base_train_config(setup);
        print_cfg.database_modality = training::Modality::Print;
        const auto print_ckpt = train_variant(setup, "print_db", print_cfg);
        const Scores print = evaluate_checkpoint(setup, print_ckpt, training::Modality::Print, {});

        auto plain_cfg = base_train_config(setup);
        plain_cfg.augment = augment::AugmentConfig::disabled();
        const auto plain_ckpt = train_variant(setup, "no_augment", plain_cfg);
        const Scores plain = evaluate_checkpoint(setup, plain_ckpt, training::Modality::Depth, {});

        const bool ok = main_scores->map >= print.map && main_scores->map >= plain.map;
        return {ok, fmt::format("mAP@5 depth {:.4f} vs print {:.4f}; full augmentation {:.4f} vs none {:.4f}",
                                main_scores->map, print.map, main_scores->map, plain.map)};
    });

    std::cout << (failed == 0 ? "ALL PASS" : fmt::format("{} FAILED", failed)) << std::endl;
    return failed == 0 ? 0 : 1;
}
