#include "crisp/cli.hpp"

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "crisp/augment.hpp"
#include "crisp/config.hpp"
#include "crisp/dataset.hpp"
#include "crisp/encoder.hpp"
#include "crisp/index.hpp"
#include "crisp/metrics.hpp"
#include "crisp/png_io.hpp"
#include "crisp/query_set.hpp"
#include "crisp/retrieval.hpp"
#include "crisp/rng.hpp"
#include "crisp/service.hpp"
#include "crisp/training.hpp"

namespace crisp::cli {

namespace fs = std::filesystem;

int exit_code_for(ErrorCode code) {
    switch (code) {
        case ErrorCode::InvalidConfig:
        case ErrorCode::InvalidArgument:
        case ErrorCode::BadManifest:
        case ErrorCode::DuplicateInstanceId:
        case ErrorCode::MissingImageFile:
        case ErrorCode::MissingGroundTruth:
        case ErrorCode::EmptyMask:
            return kExitValidation;
        default:
            return kExitRuntime;
    }
}

VisibilityMask parse_mask_argument(const std::string& text, int height, int width) {
    if (!text.empty() && text.find_first_not_of("0123456789,- ") == std::string::npos) {
        std::istringstream in(text);
        int v[4];
        char comma = 0;
        if (in >> v[0] >> comma && comma == ',' && in >> v[1] >> comma && comma == ',' && in >> v[2] >> comma &&
            comma == ',' && in >> v[3] && (in >> std::ws).eof()) {
            if (v[2] <= 0 || v[3] <= 0) fail(ErrorCode::InvalidArgument, "mask rectangle needs positive w and h");
            return VisibilityMask::rectangle(height, width, v[0], v[1], v[2], v[3]);
        }
        fail(ErrorCode::InvalidArgument, "mask rectangle must be x,y,w,h: " + text);
    }
    if (!fs::exists(text)) fail(ErrorCode::MissingImageFile, "mask file not found: " + text);
    const auto mask = VisibilityMask::from_image(read_png(text));
    if (mask.height() != height || mask.width() != width)
        fail(ErrorCode::InvalidArgument, "mask " + text + " is " + std::to_string(mask.width()) + "x" +
                                             std::to_string(mask.height()) + ", expected " + std::to_string(width) +
                                             "x" + std::to_string(height));
    return mask;
}

namespace {

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::optional<int> k;
    std::string mask;
    std::string weights;
    std::string index;
    std::string manifest;
};

void setup_logging() {
    static const bool done = [] {
        auto logger = spdlog::stderr_color_mt("crisp");
        spdlog::set_default_logger(logger);
        spdlog::set_pattern("[%H:%M:%S.%e] [%^%l%$] %v");
        return true;
    }();
    (void)done;
    auto level = spdlog::level::info;
    if (const char* env = std::getenv("CRISP_LOG")) {
        level = spdlog::level::from_str(env);
        if (level == spdlog::level::off && std::string(env) != "off") level = spdlog::level::info;
    }
    spdlog::set_level(level);
}

config::AppConfig load_app_config(const Common& c) {
    config::AppConfig cfg = c.config.empty() ? config::AppConfig{} : config::load_config(c.config);
    if (c.seed) cfg.set_seed(*c.seed);
    if (c.k) {
        cfg.retrieval.k = *c.k;
        cfg.metrics.k = *c.k;
    }
    cfg.validate();
    return cfg;
}

void require(const std::string& value, const char* flag) {
    if (value.empty()) fail(ErrorCode::InvalidArgument, std::string("missing required flag ") + flag);
}

void require_file(const std::string& path, const char* what) {
    if (!fs::exists(path)) fail(ErrorCode::InvalidArgument, std::string(what) + " not found: " + path);
}

std::uint64_t effective_seed(const Common& c, const config::AppConfig& cfg) { return c.seed.value_or(cfg.dataset.seed); }

encoder::Encoder load_encoder(const std::string& weights) {
    require(weights, "--weights");
    require_file(weights, "weights file");
    return encoder::Encoder::from_checkpoint(weights);
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::trunc);
    if (!f) fail(ErrorCode::ImageIo, "cannot write " + path.string());
    f << text;
}

// Raw inputs are listed in a manifest whose image paths point at unaligned
// depth maps and prints; each pair is aligned into out_dir/aligned.
dataset::DatasetManifest align_raw(const config::AppConfig& cfg, const fs::path& raw_manifest, const fs::path& out_dir) {
    const auto raw = dataset::load_manifest(raw_manifest, true);
    dataset::AlignOptions opts;
    opts.frame = {cfg.dataset.canonical_height, cfg.dataset.canonical_width};
    opts.foreground_threshold = static_cast<float>(cfg.dataset.foreground_threshold);
    dataset::DatasetManifest out;
    out.canonical_size = opts.frame;
    out.base_dir = out_dir;
    fs::create_directories(out_dir / "aligned");
    for (const auto& e : raw.entries) {
        auto entry = e;
        entry.depth_path = "aligned/" + e.instance_id + "_depth.png";
        entry.print_path = "aligned/" + e.instance_id + "_print.png";
        const auto depth = dataset::align(read_png(raw.resolve(e.depth_path)), opts);
        const auto print = dataset::align(read_png(raw.resolve(e.print_path)), opts);
        if (depth.degenerate_moments || print.degenerate_moments)
            spdlog::warn("{}: isotropic foreground, rotation not estimated", e.instance_id);
        write_png(out_dir / entry.depth_path, depth.image, PngDepth::Sixteen);
        write_png(out_dir / entry.print_path, print.image, PngDepth::Sixteen);
        out.entries.push_back(std::move(entry));
    }
    return out;
}

int cmd_prepare(const Common& c, const std::string& raw_manifest, int n_queries, std::ostream& out) {
    const auto cfg = load_app_config(c);
    require(c.out, "--out");
    const fs::path dir = c.out;
    const auto seed = effective_seed(c, cfg);
    dataset::DatasetManifest manifest;
    if (!raw_manifest.empty()) {
        require_file(raw_manifest, "raw manifest");
        manifest = align_raw(cfg, raw_manifest, dir);
    } else {
        dataset::SyntheticOptions so;
        so.n_models = cfg.dataset.n_models;
        so.instances_per_model = cfg.dataset.instances_per_model;
        so.seed = seed;
        so.frame = {cfg.dataset.canonical_height, cfg.dataset.canonical_width};
        so.jitter_px = cfg.dataset.jitter_px;
        manifest = dataset::generate_synthetic(so, dir);
    }
    manifest = dataset::split_seen_unseen(manifest, cfg.dataset.fraction_unseen, seed);
    manifest.base_dir = dir;
    dataset::save_manifest(manifest, dir / "manifest.jsonl");
    if (n_queries > 0) {
        query_set::QuerySetOptions qo;
        qo.count = n_queries;
        qo.augment = cfg.augment;
        qo.seed = seed;
        qo.k = cfg.retrieval.k;
        query_set::write_queries(manifest, qo, dir);
    }
    out << (dir / "manifest.jsonl").string() << '\n';
    spdlog::info("prepared {} instances of {} models in {}", manifest.entries.size(), manifest.model_ids().size(),
                 dir.string());
    return kExitOk;
}

int cmd_augment_preview(const Common& c, const std::string& instance_id, std::ostream& out) {
    const auto cfg = load_app_config(c);
    require(c.out, "--out");
    const auto seed = effective_seed(c, cfg);
    Image clean;
    if (!c.manifest.empty()) {
        require_file(c.manifest, "manifest");
        const auto manifest = dataset::load_manifest(c.manifest, true);
        if (manifest.entries.empty()) fail(ErrorCode::BadManifest, "manifest has no entries");
        const dataset::ManifestEntry* e =
            instance_id.empty() ? &manifest.entries.front() : manifest.find(instance_id);
        if (!e) fail(ErrorCode::InvalidArgument, "unknown instance " + instance_id);
        clean = dataset::load_instance(manifest, *e).print;
    } else {
        dataset::SyntheticOptions so;
        so.n_models = 2;
        so.instances_per_model = 2;
        so.seed = seed;
        so.frame = {cfg.dataset.canonical_height, cfg.dataset.canonical_width};
        clean = dataset::generate_synthetic_instances(so).front().print;
    }

    auto forced = cfg.augment;
    forced.p_occlusion = forced.p_erasure = forced.p_noise = 1.0;
    Rng rng(seed);
    const auto recipe = augment::sample_recipe(clean.height(), clean.width(), forced, rng);
    auto only = [&](bool occ, bool era, bool noi) {
        auto r = recipe;
        if (!occ) {
            r.overlap = false;
            r.quads.clear();
        }
        r.erasure = era;
        r.noise = noi;
        return augment::apply_recipe(clean, r, forced);
    };
    const Image panels[] = {clean, only(true, false, false), only(false, true, false), only(false, false, true),
                            only(true, true, true)};
    const int h = clean.height();
    const int w = clean.width();
    constexpr int gap = 4;
    Image sheet(h, 5 * w + 4 * gap, 1.0f);
    for (int p = 0; p < 5; ++p)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) sheet.at(y, p * (w + gap) + x) = panels[p].at(y, x);
    const fs::path path = c.out;
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    write_png(path, sheet, PngDepth::Eight);
    out << path.string() << '\n';
    return kExitOk;
}

int cmd_train(const Common& c, const std::string& resume, std::optional<int> steps, std::ostream& out) {
    auto cfg = load_app_config(c);
    require(c.manifest, "--manifest");
    require(c.out, "--out");
    require_file(c.manifest, "manifest");
    if (!resume.empty()) require_file(resume, "resume checkpoint");
    if (steps) {
        cfg.training.steps = *steps;
        cfg.training.validate();
    }
    const auto manifest = dataset::load_manifest(c.manifest, true);
    const auto result = training::train(manifest, cfg.encoder, cfg.training, c.out,
                                        resume.empty() ? std::nullopt : std::optional<fs::path>(resume));
    out << result.checkpoint.string() << '\n';
    return kExitOk;
}

int cmd_build_index(const Common& c, std::ostream& out) {
    const auto cfg = load_app_config(c);
    require(c.manifest, "--manifest");
    require(c.out, "--out");
    require_file(c.manifest, "manifest");
    const auto manifest = dataset::load_manifest(c.manifest, true);
    const auto enc = load_encoder(c.weights);
    index::BuildOptions opts;
    opts.modality = cfg.retrieval.database_modality;
    index::BuildReport report;
    const auto idx = index::build_index(manifest, enc, opts, &report);
    index::save_index(idx, c.out);
    spdlog::info("indexed {} instances ({} skipped) as {}", idx.count(), report.skipped.size(),
                 training::to_string(opts.modality));
    out << c.out << '\n';
    return kExitOk;
}

int cmd_query(const Common& c, const std::string& print_path, std::ostream& out) {
    const auto cfg = load_app_config(c);
    require(c.index, "--index");
    require(print_path, "--print");
    require_file(c.index, "index");
    if (!fs::exists(print_path)) fail(ErrorCode::MissingImageFile, "print not found: " + print_path);
    const auto enc = load_encoder(c.weights);
    const auto idx = index::load_index(c.index);
    const auto frame = enc.config().frame;
    retrieval::QuerySpec spec;
    spec.query_id = fs::path(print_path).stem().string();
    spec.print = read_png(print_path);
    if (spec.print.height() != frame.height || spec.print.width() != frame.width)
        fail(ErrorCode::InvalidArgument, "print must be aligned to the " + std::to_string(frame.width) + "x" +
                                             std::to_string(frame.height) + " canonical frame");
    spec.mask = c.mask.empty() ? VisibilityMask::full(frame.height, frame.width)
                               : parse_mask_argument(c.mask, frame.height, frame.width);
    spec.k = cfg.retrieval.k;
    const auto result = retrieval::query(idx, enc, spec, cfg.retrieval.options());
    const auto text = retrieval::to_json_text(result);
    if (c.out.empty())
        out << text << '\n';
    else
        write_text(c.out, text + "\n");
    return kExitOk;
}

int cmd_evaluate(const Common& c, const std::string& queries, const std::string& ground_truth, std::ostream& out) {
    const auto cfg = load_app_config(c);
    require(c.index, "--index");
    require(queries, "--queries");
    require(ground_truth, "--ground-truth");
    require_file(c.index, "index");
    require_file(queries, "queries file");
    require_file(ground_truth, "ground truth");
    const auto truth = dataset::load_ground_truth(ground_truth);
    std::optional<std::set<std::string>> seen;
    if (!c.manifest.empty()) {
        require_file(c.manifest, "manifest");
        const auto manifest = dataset::load_manifest(c.manifest, false);
        auto scored = truth;
        std::erase_if(scored, [](const auto& kv) { return kv.second.empty(); });
        dataset::validate_ground_truth(scored, manifest);
        const auto trainable = manifest.trainable_model_ids();
        if (trainable.size() != manifest.model_ids().size()) seen.emplace(trainable.begin(), trainable.end());
    }
    const auto specs = query_set::load_queries(queries, cfg.metrics.k);
    const auto enc = load_encoder(c.weights);
    const auto idx = index::load_index(c.index);

    const auto outcomes = retrieval::batch_query(idx, enc, specs, cfg.retrieval.options());
    std::vector<retrieval::RankedResult> results;
    for (const auto& o : outcomes) {
        if (o.result) {
            results.push_back(*o.result);
        } else {
            spdlog::warn("query {} failed ({}): {}; scored as an empty ranking", o.query_id,
                         to_string(o.error->code), o.error->message);
            results.push_back({o.query_id, cfg.metrics.k, {}});
        }
    }
    const auto report = metrics::evaluate(results, truth, cfg.metrics, seen);
    const auto j = metrics::to_json(report);
    if (!c.out.empty()) {
        const fs::path dir = c.out;
        write_text(dir / "report.json", j.dump(2) + "\n");
        metrics::write_csv(report, dir / "per_query.csv");
    }
    out << j.dump(2) << '\n';
    return kExitOk;
}

service::Service* g_service = nullptr;

int cmd_serve(const Common& c, const std::string& host, std::optional<int> port) {
    auto cfg = load_app_config(c);
    if (!host.empty()) cfg.service.host = host;
    if (port) cfg.service.port = *port;
    std::shared_ptr<const index::FeatureIndex> idx;
    std::shared_ptr<const encoder::Encoder> enc;
    if (!c.weights.empty()) enc = std::make_shared<const encoder::Encoder>(load_encoder(c.weights));
    if (!c.index.empty()) {
        require_file(c.index, "index");
        idx = std::make_shared<const index::FeatureIndex>(index::load_index(c.index));
    }
    std::optional<dataset::DatasetManifest> manifest;
    if (!c.manifest.empty()) {
        require_file(c.manifest, "manifest");
        manifest = dataset::load_manifest(c.manifest, false);
    }
    if (!idx || !enc) spdlog::warn("serving without {}; queries will answer 503", idx ? "weights" : "an index");
    service::Service svc(cfg.service, cfg.retrieval.options(), cfg.retrieval.k, idx, enc, std::move(manifest));
    const int bound = svc.bind(cfg.service.host, cfg.service.port);
    spdlog::info("listening on http://{}:{}", cfg.service.host, bound);
    g_service = &svc;
    std::signal(SIGINT, [](int) {
        if (g_service) g_service->stop();
    });
    std::signal(SIGTERM, [](int) {
        if (g_service) g_service->stop();
    });
    svc.listen();
    g_service = nullptr;
    return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    setup_logging();
    CLI::App app{"Partial shoeprint retrieval against a reference database", "crisp"};
    app.require_subcommand(1);
    Common c;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", c.config, "config JSON file");
        sub->add_option("--seed", c.seed, "seed for every random stream");
        sub->add_option("--out", c.out, "output path");
    };
    auto add_k = [&](CLI::App* sub) { sub->add_option("--k", c.k, "ranking cutoff"); };
    auto add_weights = [&](CLI::App* sub) { sub->add_option("--weights", c.weights, "encoder checkpoint"); };
    auto add_index = [&](CLI::App* sub) { sub->add_option("--index", c.index, "feature index file"); };
    auto add_manifest = [&](CLI::App* sub) { sub->add_option("--manifest", c.manifest, "dataset manifest"); };

    std::string raw_manifest;
    int n_queries = 0;
    auto* prepare = app.add_subcommand("prepare", "generate or align a dataset and write its manifest");
    add_common(prepare);
    prepare->add_option("--raw-manifest", raw_manifest, "manifest of unaligned images to align");
    prepare->add_option("--queries", n_queries, "also write this many degraded queries")->check(CLI::NonNegativeNumber);

    std::string instance_id;
    auto* preview = app.add_subcommand("augment-preview", "write a contact sheet of the degradations");
    add_common(preview);
    add_manifest(preview);
    preview->add_option("--instance", instance_id, "instance to degrade (default: first)");

    std::string resume;
    std::optional<int> steps;
    auto* train = app.add_subcommand("train", "train the encoder");
    add_common(train);
    add_manifest(train);
    train->add_option("--resume", resume, "checkpoint to continue from");
    train->add_option("--steps", steps, "total optimizer steps");

    auto* build = app.add_subcommand("build-index", "encode the reference database");
    add_common(build);
    add_manifest(build);
    add_weights(build);

    std::string print_path;
    auto* query = app.add_subcommand("query", "rank reference models for one print");
    add_common(query);
    add_k(query);
    add_weights(query);
    add_index(query);
    query->add_option("--print", print_path, "aligned query print PNG");
    query->add_option("--mask", c.mask, "mask PNG or rectangle x,y,w,h");

    std::string queries;
    std::string ground_truth;
    auto* evaluate = app.add_subcommand("evaluate", "score a query set");
    add_common(evaluate);
    add_k(evaluate);
    add_weights(evaluate);
    add_index(evaluate);
    add_manifest(evaluate);
    evaluate->add_option("--queries", queries, "queries.jsonl");
    evaluate->add_option("--ground-truth", ground_truth, "ground_truth.json");

    std::string host;
    std::optional<int> port;
    auto* serve = app.add_subcommand("serve", "run the HTTP service");
    add_common(serve);
    add_k(serve);
    add_weights(serve);
    add_index(serve);
    add_manifest(serve);
    serve->add_option("--host", host, "bind address");
    serve->add_option("--port", port, "port (0 picks a free one)");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "ERROR " << to_string(ErrorCode::InvalidArgument) << ": " << e.what() << '\n';
        return kExitValidation;
    }

    try {
        if (*prepare) return cmd_prepare(c, raw_manifest, n_queries, out);
        if (*preview) return cmd_augment_preview(c, instance_id, out);
        if (*train) return cmd_train(c, resume, steps, out);
        if (*build) return cmd_build_index(c, out);
        if (*query) return cmd_query(c, print_path, out);
        if (*evaluate) return cmd_evaluate(c, queries, ground_truth, out);
        if (*serve) return cmd_serve(c, host, port);
    } catch (const Error& e) {
        err << "ERROR " << to_string(e.code()) << ": " << e.what() << '\n';
        return exit_code_for(e.code());
    } catch (const std::exception& e) {
        err << "ERROR Internal: " << e.what() << '\n';
        return kExitRuntime;
    }
    return kExitValidation;
}

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return run(args, std::cout, std::cerr);
}

}  // namespace crisp::cli
