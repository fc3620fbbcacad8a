#include "crisp/retrieval.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <map>

#include "crisp/kernels.hpp"

namespace crisp::retrieval {

std::vector<double> score_entries(const index::FeatureIndex& index, const masking::CellMask& mask,
                                  std::span<const double> query) {
    const auto& h = index.header();
    if (query.size() != h.entry_floats())
        fail(ErrorCode::ShapeMismatch, "query vector length does not match the index feature shape");
    if (static_cast<std::size_t>(mask.height) != h.grid_height || static_cast<std::size_t>(mask.width) != h.grid_width)
        fail(ErrorCode::ShapeMismatch, "cell mask does not match the index grid");
    const std::vector<int> cells = mask.indices();
    std::vector<double> scores(index.count());
    kernels::masked_cosine_scores(index.all_features(), index.count(), static_cast<int>(h.channels),
                                  static_cast<int>(h.cells()), cells, query, scores);
    return scores;
}

RankedResult rank_models(const index::FeatureIndex& index, std::span<const double> scores, int k,
                         const std::string& query_id) {
    if (k < 1) fail(ErrorCode::InvalidArgument, "k must be >= 1");
    std::map<std::string, RankedItem> best;
    for (std::size_t i = 0; i < index.count(); ++i) {
        const auto& model = index.model_id(i);
        const auto& inst = index.instance_id(i);
        auto [it, inserted] = best.try_emplace(model, RankedItem{model, inst, scores[i]});
        if (inserted) continue;
        auto& b = it->second;
        if (scores[i] > b.score || (scores[i] == b.score && inst < b.best_instance_id)) {
            b.best_instance_id = inst;
            b.score = scores[i];
        }
    }
    std::vector<RankedItem> items;
    items.reserve(best.size());
    for (auto& [_, item] : best) items.push_back(std::move(item));
    std::stable_sort(items.begin(), items.end(), [](const RankedItem& a, const RankedItem& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.model_id < b.model_id;
    });
    if (items.size() > static_cast<std::size_t>(k)) items.resize(k);
    return {query_id, k, std::move(items)};
}

EncodedQuery encode_query(const encoder::Encoder& encoder, const Image& print, const VisibilityMask& mask,
                          const RetrievalOptions& options) {
    const auto& cfg = encoder.config();
    if (mask.height() != cfg.frame.height || mask.width() != cfg.frame.width)
        fail(ErrorCode::ShapeMismatch, "visibility mask must match the canonical frame");
    EncodedQuery q;
    q.cells = masking::downsample_mask(mask, cfg.grid_height(), cfg.grid_width());
    if (q.cells.count() == 0) fail(ErrorCode::EmptyMask, "visibility mask covers no feature cell");
    if (!options.feature_masking) q.cells = masking::CellMask::full(cfg.grid_height(), cfg.grid_width());
    const Image input = options.mask_query_print ? apply_pixel_mask(print, mask) : print;
    const auto z = encoder.encode(input, encoder::Channel::Print);
    q.vector = masking::mask_features(z, q.cells);
    return q;
}

RankedResult query(const index::FeatureIndex& index, const encoder::Encoder& encoder, const QuerySpec& spec,
                   const RetrievalOptions& options) {
    if (spec.k < 1) fail(ErrorCode::InvalidArgument, "k must be >= 1");
    index.check_compatible(encoder.config());
    const EncodedQuery q = encode_query(encoder, spec.print, spec.mask, options);
    const auto scores = score_entries(index, q.cells, q.vector);
    return rank_models(index, scores, spec.k, spec.query_id);
}

std::vector<QueryOutcome> batch_query(const index::FeatureIndex& index, const encoder::Encoder& encoder,
                                      std::span<const QuerySpec> specs, const RetrievalOptions& options) {
    std::vector<QueryOutcome> out(specs.size());
    for (std::size_t i = 0; i < specs.size(); ++i) {
        out[i].query_id = specs[i].query_id;
        try {
            out[i].result = query(index, encoder, specs[i], options);
        } catch (const Error& e) {
            out[i].error = QueryError{e.code(), e.what()};
        }
    }
    return out;
}

std::string to_json_text(const RankedResult& result) {
    using nlohmann::json;
    std::string s = fmt::format("{{\"query_id\":{},\"k\":{},\"results\":[", json(result.query_id).dump(), result.k);
    for (std::size_t i = 0; i < result.results.size(); ++i) {
        const auto& r = result.results[i];
        // Avoid printing -0.000000 for tiny negative scores.
        const double score = std::abs(r.score) < 5e-7 ? 0.0 : r.score;
        s += fmt::format("{}{{\"model_id\":{},\"best_instance_id\":{},\"score\":{:.6f}}}", i ? "," : "",
                         json(r.model_id).dump(), json(r.best_instance_id).dump(), score);
    }
    s += "]}";
    return s;
}

nlohmann::json to_json(const RankedResult& result) { return nlohmann::json::parse(to_json_text(result)); }

}  // namespace crisp::retrieval
