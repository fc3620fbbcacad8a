#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "crisp/dataset.hpp"
#include "crisp/error.hpp"
#include "crisp/png_io.hpp"
#include "crisp/rng.hpp"

namespace crisp::dataset {

using nlohmann::json;

std::string to_string(Split split) {
    switch (split) {
        case Split::Train: return "train";
        case Split::RefOnly: return "ref_only";
        case Split::Query: return "query";
    }
    return "train";
}

Split split_from_string(const std::string& text) {
    if (text == "train") return Split::Train;
    if (text == "ref_only") return Split::RefOnly;
    if (text == "query") return Split::Query;
    fail(ErrorCode::BadManifest, "unknown split '" + text + "'");
}

std::vector<std::string> DatasetManifest::model_ids() const {
    std::set<std::string> ids;
    for (const auto& e : entries) ids.insert(e.model_id);
    return {ids.begin(), ids.end()};
}

std::vector<std::string> DatasetManifest::trainable_model_ids() const {
    std::set<std::string> ids;
    for (const auto& e : entries)
        if (e.split == Split::Train) ids.insert(e.model_id);
    return {ids.begin(), ids.end()};
}

std::vector<const ManifestEntry*> DatasetManifest::instances_of(const std::string& model_id,
                                                                bool trainable_only) const {
    std::vector<const ManifestEntry*> out;
    for (const auto& e : entries)
        if (e.model_id == model_id && (!trainable_only || e.split == Split::Train)) out.push_back(&e);
    return out;
}

const ManifestEntry* DatasetManifest::find(const std::string& instance_id) const {
    for (const auto& e : entries)
        if (e.instance_id == instance_id) return &e;
    return nullptr;
}

std::filesystem::path DatasetManifest::resolve(const std::string& relative) const {
    const std::filesystem::path p(relative);
    if (p.is_absolute() || base_dir.empty()) return p;
    return base_dir / p;
}

bool same_fields(const DatasetManifest& a, const DatasetManifest& b) {
    return a.entries == b.entries && a.canonical_size == b.canonical_size;
}

void validate_manifest(const DatasetManifest& manifest, bool verify_files) {
    std::set<std::string> seen;
    for (const auto& e : manifest.entries) {
        if (e.instance_id.empty() || e.model_id.empty())
            fail(ErrorCode::BadManifest, "manifest entry with empty instance_id or model_id");
        if (!seen.insert(e.instance_id).second)
            fail(ErrorCode::DuplicateInstanceId, "duplicate instance_id '" + e.instance_id + "'");
        if (verify_files) {
            for (const auto* rel : {&e.depth_path, &e.print_path})
                if (!std::filesystem::exists(manifest.resolve(*rel)))
                    fail(ErrorCode::MissingImageFile, "missing image file " + manifest.resolve(*rel).string());
        }
    }
}

DatasetManifest load_manifest(const std::filesystem::path& path, bool verify_files) {
    std::ifstream in(path);
    if (!in) fail(ErrorCode::BadManifest, "cannot open manifest " + path.string());
    DatasetManifest manifest;
    manifest.base_dir = path.parent_path();
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json record;
        try {
            record = json::parse(line);
        } catch (const json::exception& e) {
            fail(ErrorCode::BadManifest, path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
        try {
            if (record.contains("canonical_size")) {
                manifest.canonical_size.height = record.at("canonical_size").at(0).get<int>();
                manifest.canonical_size.width = record.at("canonical_size").at(1).get<int>();
                continue;
            }
            ManifestEntry e;
            e.instance_id = record.at("instance_id").get<std::string>();
            e.model_id = record.at("model_id").get<std::string>();
            e.depth_path = record.at("depth_path").get<std::string>();
            e.print_path = record.at("print_path").get<std::string>();
            e.source_tag = record.value("source_tag", std::string{});
            e.split = split_from_string(record.value("split", std::string{"train"}));
            manifest.entries.push_back(std::move(e));
        } catch (const json::exception& e) {
            fail(ErrorCode::BadManifest, path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    validate_manifest(manifest, verify_files);
    return manifest;
}

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
    validate_manifest(manifest, false);
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) fail(ErrorCode::BadManifest, "cannot write manifest " + path.string());
    out << json{{"canonical_size", {manifest.canonical_size.height, manifest.canonical_size.width}}}.dump()
        << '\n';
    for (const auto& e : manifest.entries) {
        json record = {{"instance_id", e.instance_id}, {"model_id", e.model_id},
                       {"depth_path", e.depth_path},   {"print_path", e.print_path},
                       {"source_tag", e.source_tag},   {"split", to_string(e.split)}};
        out << record.dump() << '\n';
    }
}

ShoeInstance load_instance(const DatasetManifest& manifest, const ManifestEntry& entry) {
    ShoeInstance inst;
    inst.instance_id = entry.instance_id;
    inst.model_id = entry.model_id;
    inst.source_tag = entry.source_tag;
    inst.depth = read_png(manifest.resolve(entry.depth_path));
    inst.print = read_png(manifest.resolve(entry.print_path));
    const auto& frame = manifest.canonical_size;
    for (const Image* img : {&inst.depth, &inst.print})
        if (img->height() != frame.height || img->width() != frame.width)
            fail(ErrorCode::ShapeMismatch, "instance " + entry.instance_id + " is not in the canonical frame");
    return inst;
}

GroundTruthMap load_ground_truth(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorCode::InvalidArgument, "cannot open ground truth " + path.string());
    GroundTruthMap truth;
    try {
        const json doc = json::parse(in);
        for (const auto& [query_id, models] : doc.items()) {
            auto& set = truth[query_id];
            for (const auto& m : models) set.insert(m.get<std::string>());
        }
    } catch (const json::exception& e) {
        fail(ErrorCode::InvalidArgument, "ground truth " + path.string() + ": " + e.what());
    }
    return truth;
}

void save_ground_truth(const GroundTruthMap& truth, const std::filesystem::path& path) {
    json doc = json::object();
    for (const auto& [query_id, models] : truth) doc[query_id] = std::vector<std::string>(models.begin(), models.end());
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    out << doc.dump(2) << '\n';
}

void validate_ground_truth(const GroundTruthMap& truth, const DatasetManifest& reference) {
    const auto models = reference.model_ids();
    const std::set<std::string> known(models.begin(), models.end());
    for (const auto& [query_id, set] : truth) {
        if (set.empty()) fail(ErrorCode::InvalidArgument, "ground truth for '" + query_id + "' is empty");
        for (const auto& m : set)
            if (!known.contains(m))
                fail(ErrorCode::InvalidArgument,
                     "ground truth for '" + query_id + "' names unknown model '" + m + "'");
    }
}

DatasetManifest split_seen_unseen(const DatasetManifest& manifest, double fraction_unseen, std::uint64_t seed) {
    if (!(fraction_unseen >= 0.0 && fraction_unseen < 1.0))
        fail(ErrorCode::InvalidArgument, "fraction_unseen must be in [0, 1)");
    auto models = manifest.model_ids();
    Rng rng(seed);
    for (std::size_t i = models.size(); i > 1; --i) std::swap(models[i - 1], models[rng.below(i)]);
    const auto n_unseen = static_cast<std::size_t>(fraction_unseen * static_cast<double>(models.size()));
    const std::set<std::string> unseen(models.begin(), models.begin() + static_cast<std::ptrdiff_t>(n_unseen));

    DatasetManifest out = manifest;
    for (auto& e : out.entries) {
        if (e.split == Split::Query) continue;
        e.split = unseen.contains(e.model_id) ? Split::RefOnly : Split::Train;
    }
    return out;
}

}  // namespace crisp::dataset
