#include "crisp/query_set.hpp"

#include <cstdio>
#include <fstream>

#include <json.hpp>

#include "crisp/error.hpp"
#include "crisp/masking.hpp"
#include "crisp/png_io.hpp"
#include "crisp/rng.hpp"

namespace crisp::query_set {

using nlohmann::json;

namespace {

constexpr std::uint64_t kQueryStream = 0x71756572;

std::string query_id(int q) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "Q-%04d", q);
    return buf;
}

}  // namespace

std::vector<retrieval::QuerySpec> make_queries(const std::vector<dataset::ShoeInstance>& sources,
                                               const QuerySetOptions& options, dataset::GroundTruthMap& truth) {
    if (sources.empty()) fail(ErrorCode::InvalidArgument, "query set needs at least one source instance");
    if (options.count < 0) fail(ErrorCode::InvalidArgument, "query count must be >= 0");
    std::vector<retrieval::QuerySpec> out;
    for (int q = 0; q < options.count; ++q) {
        const auto& src = sources[static_cast<std::size_t>(q) % sources.size()];
        Rng rng = Rng::derive(options.seed, static_cast<std::uint64_t>(q), kQueryStream);
        const dataset::CanonicalFrame frame{src.print.height(), src.print.width()};
        retrieval::QuerySpec spec;
        spec.query_id = query_id(q);
        spec.mask = masking::sample_rect_mask(rng, options.mask_area_fraction, frame);
        // Only the visible rectangle of the print survives.
        spec.print = apply_pixel_mask(augment::augment(src.print, options.augment, rng).first, spec.mask);
        spec.k = options.k;
        truth[spec.query_id] = {src.model_id};
        out.push_back(std::move(spec));
    }
    return out;
}

std::vector<QueryRecord> write_queries(const dataset::DatasetManifest& manifest, const QuerySetOptions& options,
                                       const std::filesystem::path& out_dir) {
    std::vector<dataset::ShoeInstance> sources;
    for (const auto& e : manifest.entries)
        if (e.split != dataset::Split::Query) sources.push_back(dataset::load_instance(manifest, e));
    dataset::GroundTruthMap truth;
    const auto specs = make_queries(sources, options, truth);

    std::filesystem::create_directories(out_dir / "queries");
    std::vector<QueryRecord> records;
    std::ofstream f(out_dir / "queries.jsonl", std::ios::trunc);
    if (!f) fail(ErrorCode::ImageIo, "cannot write " + (out_dir / "queries.jsonl").string());
    for (std::size_t q = 0; q < specs.size(); ++q) {
        QueryRecord r;
        r.query_id = specs[q].query_id;
        r.print_path = "queries/" + r.query_id + "_print.png";
        r.mask_path = "queries/" + r.query_id + "_mask.png";
        r.source_instance_id = sources[q % sources.size()].instance_id;
        write_png(out_dir / r.print_path, specs[q].print, PngDepth::Sixteen);
        write_png(out_dir / r.mask_path, specs[q].mask.to_image(), PngDepth::Eight);
        f << json{{"query_id", r.query_id},
                  {"print_path", r.print_path},
                  {"mask_path", r.mask_path},
                  {"source_instance_id", r.source_instance_id}}
                 .dump()
          << '\n';
        records.push_back(std::move(r));
    }
    dataset::save_ground_truth(truth, out_dir / "ground_truth.json");
    return records;
}

std::vector<retrieval::QuerySpec> load_queries(const std::filesystem::path& path, int k) {
    std::ifstream f(path);
    if (!f) fail(ErrorCode::InvalidArgument, "cannot read queries file " + path.string());
    const auto base = path.parent_path();
    std::vector<retrieval::QuerySpec> out;
    std::string line;
    int line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            fail(ErrorCode::InvalidArgument, path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
        if (!j.contains("query_id") || !j.contains("print_path") || !j.contains("mask_path"))
            fail(ErrorCode::InvalidArgument,
                 path.string() + ":" + std::to_string(line_no) + ": needs query_id, print_path and mask_path");
        retrieval::QuerySpec spec;
        spec.query_id = j.at("query_id").get<std::string>();
        const auto print_path = base / j.at("print_path").get<std::string>();
        const auto mask_path = base / j.at("mask_path").get<std::string>();
        if (!std::filesystem::exists(print_path))
            fail(ErrorCode::MissingImageFile, "missing query image " + print_path.string());
        if (!std::filesystem::exists(mask_path))
            fail(ErrorCode::MissingImageFile, "missing query mask " + mask_path.string());
        spec.print = read_png(print_path);
        spec.mask = VisibilityMask::from_image(read_png(mask_path));
        spec.k = k;
        out.push_back(std::move(spec));
    }
    return out;
}

}  // namespace crisp::query_set
