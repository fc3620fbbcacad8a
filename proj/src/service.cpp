#include "crisp/service.hpp"

#include <fmt/format.h>
#include <httplib.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <list>
#include <mutex>
#include <numbers>
#include <unordered_map>

#include "crisp/error.hpp"
#include "crisp/masking.hpp"
#include "crisp/png_io.hpp"

namespace crisp::service {

using nlohmann::json;

namespace {

double number_field(const json& j, const char* key, double fallback) {
    if (!j.contains(key)) return fallback;
    const auto& v = j.at(key);
    if (!v.is_number()) fail(ErrorCode::InvalidArgument, std::string("transform.") + key + " must be a number");
    const double d = v.get<double>();
    if (!std::isfinite(d)) fail(ErrorCode::InvalidArgument, std::string("transform.") + key + " must be finite");
    return d;
}

double cross(const Point& o, const Point& a, const Point& b) {
    return (a.first - o.first) * (b.second - o.second) - (a.second - o.second) * (b.first - o.first);
}

bool on_segment(const Point& p, const Point& a, const Point& b) {
    return std::min(a.first, b.first) <= p.first && p.first <= std::max(a.first, b.first) &&
           std::min(a.second, b.second) <= p.second && p.second <= std::max(a.second, b.second);
}

int sign(double v) { return (v > 0.0) - (v < 0.0); }

bool segments_intersect(const Point& p1, const Point& p2, const Point& q1, const Point& q2) {
    const int d1 = sign(cross(q1, q2, p1));
    const int d2 = sign(cross(q1, q2, p2));
    const int d3 = sign(cross(p1, p2, q1));
    const int d4 = sign(cross(p1, p2, q2));
    if (d1 != d2 && d3 != d4) return true;
    return (d1 == 0 && on_segment(p1, q1, q2)) || (d2 == 0 && on_segment(p2, q1, q2)) ||
           (d3 == 0 && on_segment(q1, p1, p2)) || (d4 == 0 && on_segment(q2, p1, p2));
}

int http_status_for(ErrorCode code) {
    switch (code) {
        case ErrorCode::InvalidArgument:
        case ErrorCode::EmptyMask:
        case ErrorCode::ZeroVector:
        case ErrorCode::ImageIo:
        case ErrorCode::ShapeMismatch:
            return 400;
        default:
            return 500;
    }
}

Reply error_reply(int status, std::string_view code, const std::string& message) {
    return {status, "application/json", json{{"error", {{"code", code}, {"message", message}}}}.dump()};
}

Reply error_reply(const Error& e) { return error_reply(http_status_for(e.code()), to_string(e.code()), e.what()); }

class LruCache {
public:
    struct Entry {
        std::string body;
        std::string mask_png;
    };

    explicit LruCache(std::size_t capacity) : capacity_(capacity) {}

    void put(const std::string& key, Entry value) {
        std::lock_guard lock(mutex_);
        if (capacity_ == 0) return;
        if (auto it = map_.find(key); it != map_.end()) {
            order_.erase(it->second);
            map_.erase(it);
        }
        order_.emplace_front(key, std::move(value));
        map_[key] = order_.begin();
        while (map_.size() > capacity_) {
            map_.erase(order_.back().first);
            order_.pop_back();
        }
    }

    std::optional<Entry> get(const std::string& key) {
        std::lock_guard lock(mutex_);
        const auto it = map_.find(key);
        if (it == map_.end()) return std::nullopt;
        order_.splice(order_.begin(), order_, it->second);
        return it->second->second;
    }

private:
    std::size_t capacity_;
    std::mutex mutex_;
    std::list<std::pair<std::string, Entry>> order_;
    std::unordered_map<std::string, std::list<std::pair<std::string, Entry>>::iterator> map_;
};

}  // namespace

AlignmentTransform transform_from_json(const json& j) {
    if (j.is_null()) return {};
    if (!j.is_object()) fail(ErrorCode::InvalidArgument, "transform must be an object");
    for (const auto& [key, _] : j.items())
        if (key != "tx" && key != "ty" && key != "rotation_deg" && key != "scale")
            fail(ErrorCode::InvalidArgument, "unknown transform field '" + key + "'");
    AlignmentTransform t;
    t.tx = number_field(j, "tx", 0.0);
    t.ty = number_field(j, "ty", 0.0);
    t.rotation_deg = number_field(j, "rotation_deg", 0.0);
    t.scale = number_field(j, "scale", 1.0);
    if (!(t.scale > 0.0)) fail(ErrorCode::InvalidArgument, "transform.scale must be positive");
    return t;
}

Image apply_transform(const Image& upload, const AlignmentTransform& t, dataset::CanonicalFrame frame) {
    const double fcx = (frame.width - 1) / 2.0;
    const double fcy = (frame.height - 1) / 2.0;
    const double scx = (upload.width() - 1) / 2.0;
    const double scy = (upload.height() - 1) / 2.0;
    const double a = t.rotation_deg * std::numbers::pi / 180.0;
    const double c = std::cos(a);
    const double s = std::sin(a);
    Image out(frame.height, frame.width);
    for (int y = 0; y < frame.height; ++y)
        for (int x = 0; x < frame.width; ++x) {
            const double dx = x - fcx - t.tx;
            const double dy = y - fcy - t.ty;
            const double u = (c * dx + s * dy) / t.scale;
            const double v = (-s * dx + c * dy) / t.scale;
            out.at(y, x) = std::clamp(upload.sample(scy + v, scx + u), 0.0f, 1.0f);
        }
    return out;
}

VisibilityMask rasterize_polygon(std::span<const Point> polygon, int height, int width) {
    const std::size_t n = polygon.size();
    if (n < 3) fail(ErrorCode::InvalidArgument, "mask polygon needs at least 3 vertices");
    for (const auto& [x, y] : polygon)
        if (!std::isfinite(x) || !std::isfinite(y))
            fail(ErrorCode::InvalidArgument, "mask polygon vertices must be finite");
    double area2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const auto& p = polygon[i];
        const auto& q = polygon[(i + 1) % n];
        area2 += p.first * q.second - q.first * p.second;
    }
    if (std::abs(area2) < 1e-9) fail(ErrorCode::InvalidArgument, "mask polygon has zero area");
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            if (j == i + 1 || (i == 0 && j == n - 1)) continue;
            if (segments_intersect(polygon[i], polygon[(i + 1) % n], polygon[j], polygon[(j + 1) % n]))
                fail(ErrorCode::InvalidArgument, "mask polygon is self-intersecting");
        }

    VisibilityMask mask(height, width);
    std::vector<double> xs;
    for (int y = 0; y < height; ++y) {
        const double cy = y + 0.5;
        xs.clear();
        for (std::size_t i = 0; i < n; ++i) {
            const auto& [x1, y1] = polygon[i];
            const auto& [x2, y2] = polygon[(i + 1) % n];
            if ((y1 <= cy) != (y2 <= cy)) xs.push_back(x1 + (cy - y1) * (x2 - x1) / (y2 - y1));
        }
        std::sort(xs.begin(), xs.end());
        for (std::size_t k = 0; k + 1 < xs.size(); k += 2) {
            const int x0 = std::max(0, static_cast<int>(std::ceil(xs[k] - 0.5)));
            const int x1 = std::min(width, static_cast<int>(std::ceil(xs[k + 1] - 0.5)));
            for (int x = x0; x < x1; ++x) mask.set(y, x, true);
        }
    }
    return mask;
}

VisibilityMask mask_from_json(const json& j, dataset::CanonicalFrame frame) {
    if (j.is_null()) return VisibilityMask::full(frame.height, frame.width);
    if (!j.is_object() || j.size() != 1 || !(j.contains("polygon") || j.contains("rect")))
        fail(ErrorCode::InvalidArgument, "mask must be {\"polygon\": [[x, y], ...]} or {\"rect\": [x, y, w, h]}");
    if (j.contains("rect")) {
        const auto& r = j.at("rect");
        if (!r.is_array() || r.size() != 4)
            fail(ErrorCode::InvalidArgument, "mask.rect must be [x, y, w, h]");
        int v[4];
        for (int i = 0; i < 4; ++i) {
            if (!r[i].is_number_integer()) fail(ErrorCode::InvalidArgument, "mask.rect entries must be integers");
            v[i] = r[i].get<int>();
        }
        if (v[2] <= 0 || v[3] <= 0) fail(ErrorCode::InvalidArgument, "mask.rect needs positive width and height");
        return VisibilityMask::rectangle(frame.height, frame.width, v[0], v[1], v[2], v[3]);
    }
    const auto& p = j.at("polygon");
    if (!p.is_array()) fail(ErrorCode::InvalidArgument, "mask.polygon must be a list of [x, y] pairs");
    std::vector<Point> pts;
    for (const auto& v : p) {
        if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number())
            fail(ErrorCode::InvalidArgument, "mask.polygon must be a list of [x, y] pairs");
        pts.emplace_back(v[0].get<double>(), v[1].get<double>());
    }
    return rasterize_polygon(pts, frame.height, frame.width);
}

struct Service::Impl {
    config::ServiceSection settings;
    retrieval::RetrievalOptions options;
    int default_k;
    std::shared_ptr<const index::FeatureIndex> index;
    std::shared_ptr<const encoder::Encoder> encoder;
    std::optional<dataset::DatasetManifest> manifest;
    std::string encoder_hash;
    LruCache cache;
    httplib::Server server;

    Impl(config::ServiceSection s, retrieval::RetrievalOptions o, int k,
         std::shared_ptr<const index::FeatureIndex> idx, std::shared_ptr<const encoder::Encoder> enc,
         std::optional<dataset::DatasetManifest> m)
        : settings(std::move(s)),
          options(o),
          default_k(k),
          index(std::move(idx)),
          encoder(std::move(enc)),
          manifest(std::move(m)),
          cache(settings.lru_capacity) {}

    dataset::CanonicalFrame frame() const {
        return encoder ? encoder->config().frame : dataset::CanonicalFrame{};
    }

    void routes(Service& svc);
};

Service::Service(config::ServiceSection settings, retrieval::RetrievalOptions options, int default_k,
                 std::shared_ptr<const index::FeatureIndex> index, std::shared_ptr<const encoder::Encoder> encoder,
                 std::optional<dataset::DatasetManifest> manifest)
    : impl_(std::make_unique<Impl>(std::move(settings), options, default_k, std::move(index), std::move(encoder),
                                   std::move(manifest))) {
    if (impl_->encoder) impl_->encoder_hash = encoder::to_hex(impl_->encoder->weights_hash());
    if (impl_->index && impl_->encoder) {
        impl_->index->check_compatible(impl_->encoder->config());
        if (impl_->index->header().encoder_hash != impl_->encoder->weights_hash())
            spdlog::warn("index was built with different encoder weights ({} vs {})",
                         encoder::to_hex(impl_->index->header().encoder_hash), impl_->encoder_hash);
    }
    impl_->routes(*this);
}

Service::~Service() { stop(); }

int Service::bind(const std::string& host, int port) {
    if (port == 0) return impl_->server.bind_to_any_port(host);
    if (!impl_->server.bind_to_port(host, port))
        fail(ErrorCode::InvalidArgument, "cannot bind " + host + ":" + std::to_string(port));
    return port;
}

void Service::listen() { impl_->server.listen_after_bind(); }

void Service::stop() {
    if (impl_ && impl_->server.is_running()) impl_->server.stop();
}

Reply Service::post_query(const QueryRequest& request) {
    auto& s = *impl_;
    if (!s.index || !s.encoder) return error_reply(503, "Unavailable", "index or encoder not loaded");
    const auto start = std::chrono::steady_clock::now();
    try {
        const int k = request.k.value_or(s.default_k);
        if (k < 1 || k > s.settings.max_k)
            fail(ErrorCode::InvalidArgument, "k must lie in [1, " + std::to_string(s.settings.max_k) + "]");
        if (request.print_png.empty()) fail(ErrorCode::InvalidArgument, "missing print upload");
        const auto frame = s.frame();
        const AlignmentTransform t = transform_from_json(request.transform.value_or(json()));
        const VisibilityMask mask = mask_from_json(request.mask, frame);
        const auto& cfg = s.encoder->config();
        const auto cells = masking::downsample_mask(mask, cfg.grid_height(), cfg.grid_width());
        if (request.dry_run)
            return {200, "application/json",
                    json{{"covered_cells", cells.count()},
                         {"total_cells", cells.cells.size()},
                         {"mask_pixels", mask.count()}}
                        .dump()};

        Image upload;
        try {
            upload = decode_png(request.print_png);
        } catch (const Error& e) {
            fail(ErrorCode::InvalidArgument, std::string("print upload is not a readable PNG: ") + e.what());
        }
        retrieval::QuerySpec spec;
        spec.print = apply_transform(upload, t, frame);
        spec.mask = mask;
        spec.k = k;

        std::string key = request.print_png;
        key += '\0' + request.mask.dump() + '\0' + std::to_string(k) + '\0' + json(t.tx).dump() + ',' +
               json(t.ty).dump() + ',' + json(t.rotation_deg).dump() + ',' + json(t.scale).dump();
        const auto digest = encoder::sha256({reinterpret_cast<const std::uint8_t*>(key.data()), key.size()});
        spec.query_id = encoder::to_hex(digest).substr(0, 16);

        const auto result = retrieval::query(*s.index, *s.encoder, spec, s.options);
        std::string body = retrieval::to_json_text(result);
        const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
        body.pop_back();
        body += fmt::format(",\"timing_ms\":{:.3f}}}", ms);
        s.cache.put(spec.query_id, {body, encode_png(mask.to_image(), PngDepth::Eight)});
        return {200, "application/json", body};
    } catch (const Error& e) {
        return error_reply(e);
    }
}

Reply Service::get_query(const std::string& query_id) const {
    const auto hit = impl_->cache.get(query_id);
    if (!hit) return error_reply(404, "NotFound", "query " + query_id + " is not cached");
    return {200, "application/json", hit->body};
}

Reply Service::get_query_mask(const std::string& query_id) const {
    const auto hit = impl_->cache.get(query_id);
    if (!hit) return error_reply(404, "NotFound", "query " + query_id + " is not cached");
    return {200, "image/png", hit->mask_png};
}

Reply Service::echo_mask(const json& mask) const {
    try {
        const auto m = mask_from_json(mask, impl_->frame());
        return {200, "image/png", encode_png(m.to_image(), PngDepth::Eight)};
    } catch (const Error& e) {
        return error_reply(e);
    }
}

Reply Service::get_model(const std::string& model_id) const {
    const auto& s = *impl_;
    if (!s.index) return error_reply(503, "Unavailable", "index not loaded");
    const auto entries = s.index->entries_of(model_id);
    if (entries.empty()) return error_reply(404, "NotFound", "unknown model " + model_id);
    json instances = json::array();
    for (std::size_t i : entries) {
        const auto& id = s.index->instance_id(i);
        instances.push_back(
            {{"instance_id", id}, {"depth_url", "/api/images/" + id + "/depth"}, {"print_url", "/api/images/" + id + "/print"}});
    }
    return {200, "application/json", json{{"model_id", model_id}, {"instances", instances}}.dump()};
}

Reply Service::get_image(const std::string& instance_id, const std::string& kind) const {
    const auto& s = *impl_;
    if (kind != "depth" && kind != "print") return error_reply(404, "NotFound", "unknown image kind " + kind);
    const dataset::ManifestEntry* e = s.manifest ? s.manifest->find(instance_id) : nullptr;
    if (!e) return error_reply(404, "NotFound", "unknown instance " + instance_id);
    const auto path = s.manifest->resolve(kind == "depth" ? e->depth_path : e->print_path);
    std::ifstream f(path, std::ios::binary);
    if (!f) return error_reply(404, "NotFound", "image file missing for " + instance_id);
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return {200, "image/png", std::move(bytes)};
}

Reply Service::health() const {
    const auto& s = *impl_;
    const bool ready = s.index && s.encoder;
    return {200, "application/json",
            json{{"status", ready ? "ok" : "unavailable"},
                 {"index_count", s.index ? s.index->count() : 0},
                 {"encoder_hash", s.encoder_hash}}
                .dump()};
}

namespace {

void send(httplib::Response& res, const Reply& r) {
    res.status = r.status;
    res.set_content(r.body, r.content_type);
}

std::optional<json> parse_json_field(const std::string& text, const char* name) {
    try {
        return json::parse(text);
    } catch (const json::exception&) {
        fail(ErrorCode::InvalidArgument, std::string(name) + " is not valid JSON");
    }
}

}  // namespace

void Service::Impl::routes(Service& svc) {
    server.set_payload_max_length(settings.max_upload_bytes);
    server.set_default_headers({{"Access-Control-Allow-Origin", settings.cors_origin},
                                {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"},
                                {"Access-Control-Allow-Headers", "Content-Type"}});
    const int threads = settings.threads;
    server.new_task_queue = [threads] { return new httplib::ThreadPool(static_cast<std::size_t>(threads)); };
    server.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
        std::string message = "internal error";
        try {
            std::rethrow_exception(ep);
        } catch (const std::exception& e) {
            message = e.what();
        } catch (...) {
        }
        const Reply r = error_reply(500, "Internal", message);
        res.status = r.status;
        res.set_content(r.body, r.content_type);
    });
    server.Options(R"(/api/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
    server.Get("/api/health", [&svc](const httplib::Request&, httplib::Response& res) { send(res, svc.health()); });
    server.Post("/api/queries", [&svc](const httplib::Request& req, httplib::Response& res) {
        QueryRequest q;
        try {
            if (!req.is_multipart_form_data())
                fail(ErrorCode::InvalidArgument, "POST /api/queries expects multipart/form-data");
            if (!req.has_file("print")) fail(ErrorCode::InvalidArgument, "missing 'print' upload");
            q.print_png = req.get_file_value("print").content;
            if (req.has_file("mask")) q.mask = *parse_json_field(req.get_file_value("mask").content, "mask");
            if (req.has_file("transform"))
                q.transform = parse_json_field(req.get_file_value("transform").content, "transform");
            if (req.has_file("k")) {
                const auto text = req.get_file_value("k").content;
                const auto v = parse_json_field(text, "k");
                if (!v->is_number_integer()) fail(ErrorCode::InvalidArgument, "k must be an integer");
                q.k = v->get<int>();
            }
            if (req.has_file("dry_run")) {
                const auto text = req.get_file_value("dry_run").content;
                q.dry_run = text == "true" || text == "1";
            }
        } catch (const Error& e) {
            send(res, error_reply(e));
            return;
        }
        send(res, svc.post_query(q));
    });
    server.Get("/api/queries/:id", [&svc](const httplib::Request& req, httplib::Response& res) {
        send(res, svc.get_query(req.path_params.at("id")));
    });
    server.Get("/api/queries/:id/mask", [&svc](const httplib::Request& req, httplib::Response& res) {
        send(res, svc.get_query_mask(req.path_params.at("id")));
    });
    server.Post("/api/masks", [&svc](const httplib::Request& req, httplib::Response& res) {
        try {
            send(res, svc.echo_mask(*parse_json_field(req.body, "mask")));
        } catch (const Error& e) {
            send(res, error_reply(e));
        }
    });
    server.Get("/api/models/:id", [&svc](const httplib::Request& req, httplib::Response& res) {
        send(res, svc.get_model(req.path_params.at("id")));
    });
    server.Get("/api/images/:id/:kind", [&svc](const httplib::Request& req, httplib::Response& res) {
        send(res, svc.get_image(req.path_params.at("id"), req.path_params.at("kind")));
    });
}


}  // namespace crisp::service
