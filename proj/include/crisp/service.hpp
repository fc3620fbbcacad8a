#pragma once

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "crisp/config.hpp"
#include "crisp/dataset.hpp"
#include "crisp/encoder.hpp"
#include "crisp/image.hpp"
#include "crisp/index.hpp"
#include "crisp/retrieval.hpp"

namespace crisp::service {

// Placement of an uploaded print on the canonical frame: the upload's centre
// goes to the frame centre, then the image is scaled, rotated by
// rotation_deg (clockwise on screen, y pointing down) and shifted by
// (tx, ty) pixels.
struct AlignmentTransform {
    double tx = 0.0;
    double ty = 0.0;
    double rotation_deg = 0.0;
    double scale = 1.0;

    friend bool operator==(const AlignmentTransform&, const AlignmentTransform&) = default;
};

// Throws InvalidArgument for non-numeric fields or a non-positive scale.
AlignmentTransform transform_from_json(const nlohmann::json& j);
Image apply_transform(const Image& upload, const AlignmentTransform& t, dataset::CanonicalFrame frame);

using Point = std::pair<double, double>;  // (x, y) in canonical pixel units

// Even-odd fill sampled at pixel centres (x + 0.5, y + 0.5). Throws
// InvalidArgument for fewer than 3 vertices, zero area or self-intersection.
VisibilityMask rasterize_polygon(std::span<const Point> polygon, int height, int width);

// {"polygon": [[x, y], ...]} or {"rect": [x, y, w, h]}; null means the full
// frame.
VisibilityMask mask_from_json(const nlohmann::json& j, dataset::CanonicalFrame frame);

struct QueryRequest {
    std::string print_png;
    nlohmann::json mask;  // null for the full frame
    std::optional<int> k;
    std::optional<nlohmann::json> transform;
    bool dry_run = false;
};

struct Reply {
    int status = 200;
    std::string content_type = "application/json";
    std::string body;
};

// HTTP front end over an immutable index and encoder. Either may be absent,
// in which case queries answer 503.
class Service {
public:
    Service(config::ServiceSection settings, retrieval::RetrievalOptions options, int default_k,
            std::shared_ptr<const index::FeatureIndex> index, std::shared_ptr<const encoder::Encoder> encoder,
            std::optional<dataset::DatasetManifest> manifest = std::nullopt);
    ~Service();
    Service(const Service&) = delete;
    Service& operator=(const Service&) = delete;

    // Binds the listening socket; port 0 picks a free port. Returns the port.
    int bind(const std::string& host, int port);
    // Serves until stop().
    void listen();
    void stop();

    // Transport-independent handlers behind the routes.
    Reply post_query(const QueryRequest& request);
    Reply get_query(const std::string& query_id) const;
    Reply get_query_mask(const std::string& query_id) const;
    Reply echo_mask(const nlohmann::json& mask) const;
    Reply get_model(const std::string& model_id) const;
    Reply get_image(const std::string& instance_id, const std::string& kind) const;
    Reply health() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace crisp::service
