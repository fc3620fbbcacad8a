#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "crisp/augment.hpp"
#include "crisp/dataset.hpp"
#include "crisp/retrieval.hpp"

namespace crisp::query_set {

// Degraded queries made from reference prints: each is an augmented print
// blanked outside a rectangular visibility mask, labelled with its source
// model.
struct QuerySetOptions {
    int count = 64;
    augment::Range<double> mask_area_fraction{0.4, 1.0};
    augment::AugmentConfig augment;
    std::uint64_t seed = 0;
    int k = 100;
};

struct QueryRecord {
    std::string query_id;
    std::string print_path;  // relative to the queries file directory
    std::string mask_path;
    std::string source_instance_id;
};

// Query q uses instance q mod n (in manifest order) and its own random
// stream, so any prefix of a query set is itself a valid query set.
std::vector<retrieval::QuerySpec> make_queries(const std::vector<dataset::ShoeInstance>& sources,
                                               const QuerySetOptions& options, dataset::GroundTruthMap& truth);

// Writes queries/<id>_print.png, queries/<id>_mask.png, queries.jsonl and
// ground_truth.json into out_dir.
std::vector<QueryRecord> write_queries(const dataset::DatasetManifest& manifest, const QuerySetOptions& options,
                                       const std::filesystem::path& out_dir);

// Reads queries.jsonl; mask PNG pixels at or above half scale are visible.
std::vector<retrieval::QuerySpec> load_queries(const std::filesystem::path& path, int k);

}  // namespace crisp::query_set
