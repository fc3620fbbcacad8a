#include "crisp/metrics.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <fstream>

#include "crisp/error.hpp"

namespace crisp::metrics {

void MetricConfig::validate() const {
    if (k < 1) fail(ErrorCode::InvalidConfig, "metrics.k must be >= 1");
}

std::optional<double> ap_at_k(std::span<const std::string> ranking, const std::set<std::string>& positives, int k,
                              std::size_t total_positive_count) {
    if (k < 1) fail(ErrorCode::InvalidArgument, "ap_at_k: K must be >= 1");
    if (total_positive_count == 0) return std::nullopt;
    const std::size_t depth = std::min(ranking.size(), static_cast<std::size_t>(k));
    const double n = static_cast<double>(std::min(total_positive_count, static_cast<std::size_t>(k)));
    double sum = 0.0;
    int found = 0;
    for (std::size_t r = 0; r < depth; ++r) {
        if (!positives.contains(ranking[r])) continue;
        ++found;
        sum += static_cast<double>(found) / static_cast<double>(r + 1);
    }
    return sum / n;
}

int hit_at_k(std::span<const std::string> ranking, const std::set<std::string>& positives, int k) {
    if (k < 1) fail(ErrorCode::InvalidArgument, "hit_at_k: K must be >= 1");
    const std::size_t depth = std::min(ranking.size(), static_cast<std::size_t>(k));
    for (std::size_t r = 0; r < depth; ++r)
        if (positives.contains(ranking[r])) return 1;
    return 0;
}

namespace {

SubsetSummary summarize(const std::vector<const PerQueryResult*>& rows) {
    SubsetSummary s;
    s.queries = static_cast<int>(rows.size());
    if (rows.empty()) return s;
    for (const auto* r : rows) {
        s.hit_at_k += r->hit;
        s.map_at_k += r->ap_at_k;
    }
    s.hit_at_k /= static_cast<double>(rows.size());
    s.map_at_k /= static_cast<double>(rows.size());
    return s;
}

nlohmann::json summary_json(const SubsetSummary& s) {
    return {{"queries", s.queries}, {"hit_at_k", s.hit_at_k}, {"map_at_k", s.map_at_k}};
}

}  // namespace

EvalReport evaluate(std::span<const retrieval::RankedResult> results, const dataset::GroundTruthMap& truth,
                    const MetricConfig& config, const std::optional<std::set<std::string>>& seen_models) {
    config.validate();
    EvalReport report;
    report.config = config;
    std::vector<const PerQueryResult*> seen_rows;
    std::vector<const PerQueryResult*> unseen_rows;
    std::vector<bool> is_seen;

    for (const auto& res : results) {
        const auto it = truth.find(res.query_id);
        if (it == truth.end()) fail(ErrorCode::MissingGroundTruth, "no ground truth for query " + res.query_id);
        const auto& positives = it->second;
        if (positives.empty()) {
            spdlog::warn("query {} has no positives; excluded from the report", res.query_id);
            report.excluded.push_back(res.query_id);
            continue;
        }
        PerQueryResult row;
        row.query_id = res.query_id;
        const std::size_t depth = std::min(res.results.size(), static_cast<std::size_t>(config.k));
        for (std::size_t r = 0; r < depth; ++r) {
            row.ranked.push_back(res.results[r].model_id);
            if (positives.contains(res.results[r].model_id)) row.positive_ranks.push_back(static_cast<int>(r + 1));
        }
        row.ap_at_k = *ap_at_k(row.ranked, positives, config.k, positives.size());
        row.hit = hit_at_k(row.ranked, positives, config.k);
        row.total_positives = static_cast<int>(std::min(positives.size(), static_cast<std::size_t>(config.k)));
        if (seen_models) {
            bool seen = false;
            for (const auto& m : positives) seen = seen || seen_models->contains(m);
            is_seen.push_back(seen);
        }
        report.per_query.push_back(std::move(row));
    }

    std::vector<const PerQueryResult*> all;
    for (std::size_t i = 0; i < report.per_query.size(); ++i) {
        all.push_back(&report.per_query[i]);
        if (seen_models) (is_seen[i] ? seen_rows : unseen_rows).push_back(&report.per_query[i]);
    }
    const SubsetSummary total = summarize(all);
    report.hit_at_k = total.hit_at_k;
    report.map_at_k = total.map_at_k;
    if (seen_models) {
        report.seen = summarize(seen_rows);
        report.unseen = summarize(unseen_rows);
    }
    return report;
}

nlohmann::json to_json(const EvalReport& report) {
    nlohmann::json per = nlohmann::json::array();
    for (const auto& r : report.per_query)
        per.push_back({{"query_id", r.query_id},
                       {"ranked", r.ranked},
                       {"positive_ranks", r.positive_ranks},
                       {"ap_at_k", r.ap_at_k},
                       {"hit", r.hit},
                       {"total_positives", r.total_positives}});
    nlohmann::json j{{"config", {{"k", report.config.k}}},
                     {"queries", report.per_query.size()},
                     {"hit_at_k", report.hit_at_k},
                     {"map_at_k", report.map_at_k},
                     {"excluded", report.excluded},
                     {"per_query", per}};
    if (report.seen) j["seen"] = summary_json(*report.seen);
    if (report.unseen) j["unseen"] = summary_json(*report.unseen);
    return j;
}

void write_csv(const EvalReport& report, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::trunc);
    if (!f) fail(ErrorCode::InvalidArgument, "cannot write " + path.string());
    f.precision(12);
    f << "query_id,hit,ap_at_k,total_positives,positive_ranks\n";
    for (const auto& r : report.per_query) {
        f << r.query_id << ',' << r.hit << ',' << r.ap_at_k << ',' << r.total_positives << ',';
        for (std::size_t i = 0; i < r.positive_ranks.size(); ++i) f << (i ? ";" : "") << r.positive_ranks[i];
        f << '\n';
    }
}

}  // namespace crisp::metrics
