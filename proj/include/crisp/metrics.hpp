#pragma once

#include <filesystem>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "crisp/dataset.hpp"
#include "crisp/retrieval.hpp"

namespace crisp::metrics {

struct MetricConfig {
    int k = 100;

    void validate() const;
};

// AP@K = (1/N) sum_{k<=K} precision@k * rel(k) with N = min(total_positive_count, K).
// nullopt when total_positive_count is 0 (the query is excluded upstream).
std::optional<double> ap_at_k(std::span<const std::string> ranking, const std::set<std::string>& positives, int k,
                              std::size_t total_positive_count);
int hit_at_k(std::span<const std::string> ranking, const std::set<std::string>& positives, int k);

struct PerQueryResult {
    std::string query_id;
    std::vector<std::string> ranked;  // top K model ids
    std::vector<int> positive_ranks;  // 1-based, ascending, within the top K
    double ap_at_k = 0.0;
    int hit = 0;
    int total_positives = 0;  // capped at K
};

struct SubsetSummary {
    int queries = 0;
    double hit_at_k = 0.0;
    double map_at_k = 0.0;
};

struct EvalReport {
    MetricConfig config;
    std::vector<PerQueryResult> per_query;
    double hit_at_k = 0.0;
    double map_at_k = 0.0;
    // Queries with an empty ground-truth set; not scored.
    std::vector<std::string> excluded;
    std::optional<SubsetSummary> seen;
    std::optional<SubsetSummary> unseen;
};

// Throws MissingGroundTruth when a result's query_id has no entry. With
// seen_models, queries whose positives intersect it count as seen.
EvalReport evaluate(std::span<const retrieval::RankedResult> results, const dataset::GroundTruthMap& truth,
                    const MetricConfig& config, const std::optional<std::set<std::string>>& seen_models = std::nullopt);

nlohmann::json to_json(const EvalReport& report);
// query_id,hit,ap_at_k,total_positives,positive_ranks
void write_csv(const EvalReport& report, const std::filesystem::path& path);

}  // namespace crisp::metrics
