#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "crisp/encoder.hpp"
#include "crisp/error.hpp"
#include "crisp/image.hpp"
#include "crisp/index.hpp"
#include "crisp/masking.hpp"

namespace crisp::retrieval {

struct QuerySpec {
    std::string query_id;
    Image print;
    VisibilityMask mask;
    int k = 100;
};

struct RankedItem {
    std::string model_id;
    std::string best_instance_id;
    double score = 0.0;

    friend bool operator==(const RankedItem&, const RankedItem&) = default;
};

struct RankedResult {
    std::string query_id;
    int k = 0;
    std::vector<RankedItem> results;

    friend bool operator==(const RankedResult&, const RankedResult&) = default;
};

struct RetrievalOptions {
    // Ablation switches: score over the masked cells only, and zero query
    // pixels outside the mask before encoding.
    bool feature_masking = true;
    bool mask_query_print = true;
};

// Masked cosine score of every index entry against a unit query vector laid
// out [C][cells]; entries whose masked features are zero score 0.
std::vector<double> score_entries(const index::FeatureIndex& index, const masking::CellMask& mask,
                                  std::span<const double> query);

// Max-aggregates instance scores per model and returns the top k models;
// ties go to the smaller model_id, and within a model to the smaller
// instance_id.
RankedResult rank_models(const index::FeatureIndex& index, std::span<const double> scores, int k,
                         const std::string& query_id);

// The unit query vector and the cell mask used to score it.
struct EncodedQuery {
    masking::CellMask cells;
    std::vector<double> vector;
};

// Throws EmptyMask, ZeroVector, ShapeMismatch, UnloadedWeights.
EncodedQuery encode_query(const encoder::Encoder& encoder, const Image& print, const VisibilityMask& mask,
                          const RetrievalOptions& options = {});

// Throws EmptyMask, ShapeMismatch, InvalidArgument (k < 1).
RankedResult query(const index::FeatureIndex& index, const encoder::Encoder& encoder, const QuerySpec& spec,
                   const RetrievalOptions& options = {});

struct QueryError {
    ErrorCode code = ErrorCode::InvalidArgument;
    std::string message;
};

struct QueryOutcome {
    std::string query_id;
    std::optional<RankedResult> result;
    std::optional<QueryError> error;
};

// One outcome per spec, in order; a failing spec does not stop the batch.
std::vector<QueryOutcome> batch_query(const index::FeatureIndex& index, const encoder::Encoder& encoder,
                                      std::span<const QuerySpec> specs, const RetrievalOptions& options = {});

// {"query_id", "k", "results": [{"model_id", "best_instance_id", "score"}]}
// with scores printed to 6 fractional digits.
std::string to_json_text(const RankedResult& result);
nlohmann::json to_json(const RankedResult& result);

}  // namespace crisp::retrieval
