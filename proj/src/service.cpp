#include "cellscape/service.hpp"

#include "cellscape/analysis.hpp"
#include "cellscape/container.hpp"
#include "cellscape/error.hpp"
#include "cellscape/summaries.hpp"

#include <httplib.h>

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <sstream>

namespace cellscape {

namespace {

namespace fs = std::filesystem;

std::vector<std::string> split_path(const std::string& path) {
    std::vector<std::string> parts;
    std::string cur;
    for (char c : path) {
        if (c == '/') {
            if (!cur.empty()) parts.push_back(std::move(cur));
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    if (!cur.empty()) parts.push_back(std::move(cur));
    return parts;
}

Response json_response(int status, Json body) {
    Response r;
    r.status = status;
    r.body = std::move(body);
    return r;
}

Response not_found(const std::string& what) {
    return json_response(404, {{"error", "NotFound"}, {"message", what}});
}

Response validation_error(const Error& e) { return json_response(400, error_json(e)); }

std::optional<std::string> query_value(const std::multimap<std::string, std::string>& q, const std::string& key) {
    auto it = q.find(key);
    if (it == q.end()) return std::nullopt;
    return it->second;
}

std::uint64_t query_count(const std::multimap<std::string, std::string>& q, const std::string& key,
                          std::uint64_t fallback) {
    auto v = query_value(q, key);
    if (!v) return fallback;
    std::uint64_t out = 0;
    const auto res = std::from_chars(v->data(), v->data() + v->size(), out);
    if (res.ec != std::errc() || res.ptr != v->data() + v->size() || v->empty()) {
        throw Error(ErrorCode::InvalidArgument, "'" + key + "' must be a non-negative integer", key);
    }
    return out;
}

Json parse_body(const std::string& body) {
    if (body.empty()) return Json::object();
    try {
        return Json::parse(body);
    } catch (const Json::parse_error& e) {
        throw Error(ErrorCode::InvalidArgument, std::string("request body is not valid JSON: ") + e.what(), "body");
    }
}

Response payload_too_large(std::size_t requested, std::size_t limit, const std::string& hint) {
    return json_response(413, {{"error", "PayloadTooLarge"},
                               {"message", "request covers " + std::to_string(requested) + " cells; limit is " +
                                               std::to_string(limit)},
                               {"limit", limit},
                               {"hint", hint}});
}

}  // namespace

Service::Service(ServiceConfig config) : config_(std::move(config)) {}

void Service::load_directory(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw Error(ErrorCode::IoError, "not a directory: " + dir.string(), "data");
    std::vector<fs::path> entries;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (e.is_directory() && fs::exists(e.path() / "manifest.json")) entries.push_back(e.path());
    }
    std::sort(entries.begin(), entries.end());
    for (const auto& p : entries) add_dataset(p.filename().string(), load_container(p), p);
}

void Service::add_dataset(const std::string& id, CellTable table, std::optional<fs::path> path) {
    std::unique_lock lock(datasets_mutex_);
    auto& slot = datasets_[id];
    slot.generation += 1;
    slot.table = std::move(table);
    slot.path = std::move(path);
}

std::size_t Service::cache_size() const {
    std::lock_guard lock(cache_mutex_);
    return cache_.size();
}

std::optional<Service::Dataset> Service::find_dataset(const std::string& id) const {
    std::shared_lock lock(datasets_mutex_);
    auto it = datasets_.find(id);
    if (it == datasets_.end()) return std::nullopt;
    return it->second;
}

Response Service::handle(const std::string& method, const std::string& path,
                         const std::multimap<std::string, std::string>& query, const std::string& body) {
    Response r;
    try {
        const auto parts = split_path(path);
        const bool get = method == "GET";
        const bool post = method == "POST";
        if (method == "OPTIONS") {
            r = json_response(204, nullptr);
        } else if (parts.empty() || parts[0] != "api") {
            r = not_found("no route for " + path);
        } else if (parts.size() == 2 && parts[1] == "health") {
            r = get ? json_response(200, {{"status", "ok"}}) : json_response(405, {{"error", "MethodNotAllowed"}});
        } else if (parts.size() == 2 && parts[1] == "datasets") {
            r = get ? list_datasets() : json_response(405, {{"error", "MethodNotAllowed"}});
        } else if (parts.size() == 3 && parts[1] == "jobs") {
            r = get ? get_job(parts[2]) : json_response(405, {{"error", "MethodNotAllowed"}});
        } else if (parts.size() >= 4 && parts[1] == "datasets") {
            const auto& id = parts[2];
            const auto& what = parts[3];
            if (what == "cells" && parts.size() == 4) {
                r = get ? get_cells(id, query) : json_response(405, {{"error", "MethodNotAllowed"}});
            } else if (what == "annotations" && parts.size() == 4) {
                r = post ? add_annotation(id, body) : json_response(405, {{"error", "MethodNotAllowed"}});
            } else if ((what == "summaries" || what == "spatial") && parts.size() == 5) {
                r = post ? run_analysis(id, what, parts[4], body) : json_response(405, {{"error", "MethodNotAllowed"}});
            } else {
                r = not_found("no route for " + path);
            }
        } else {
            r = not_found("no route for " + path);
        }
    } catch (const Error& e) {
        r = validation_error(e);
    } catch (const std::exception& e) {
        const auto id = "E" + std::to_string(next_error_++);
        std::fprintf(stderr, "[cellscape] internal error %s on %s %s: %s\n", id.c_str(), method.c_str(), path.c_str(),
                     e.what());
        r = json_response(500, {{"error", "InternalError"}, {"id", id}});
    }
    if (config_.allow_origin) {
        r.headers["Access-Control-Allow-Origin"] = *config_.allow_origin;
        r.headers["Access-Control-Allow-Methods"] = "GET, POST, OPTIONS";
        r.headers["Access-Control-Allow-Headers"] = "Content-Type";
        r.headers["Access-Control-Expose-Headers"] = "Cache";
    }
    return r;
}

Response Service::list_datasets() const {
    std::shared_lock lock(datasets_mutex_);
    Json out = Json::array();
    for (const auto& [id, ds] : datasets_) {
        Json d = describe_table(ds.table);
        d["id"] = id;
        out.push_back(std::move(d));
    }
    return json_response(200, {{"datasets", out}});
}

Response Service::get_cells(const std::string& id, const std::multimap<std::string, std::string>& query) const {
    const auto ds = find_dataset(id);
    if (!ds) return not_found("unknown dataset '" + id + "'");
    const auto& t = ds->table;
    const std::size_t max = query_count(query, "max", t.n_cells());
    const std::uint64_t seed = query_count(query, "seed", 0);
    const std::size_t n_out = std::min<std::size_t>(max, t.n_cells());
    if (n_out > config_.max_payload_cells) {
        return payload_too_large(n_out, config_.max_payload_cells,
                                 "pass max=" + std::to_string(config_.max_payload_cells) + " or less to downsample");
    }

    bool coords = false;
    std::vector<std::string> annotations;
    std::vector<std::string> features;
    const std::string fields = query_value(query, "fields").value_or("coords");
    std::stringstream ss(fields);
    for (std::string f; std::getline(ss, f, ',');) {
        if (f.empty()) continue;
        if (f == "coords") {
            coords = true;
        } else if (f.rfind("annotation:", 0) == 0) {
            const auto name = f.substr(11);
            if (!t.annotations().count(name)) {
                throw Error(ErrorCode::UnknownAnnotation, "unknown annotation '" + name + "'", "fields");
            }
            annotations.push_back(name);
        } else if (f.rfind("feature:", 0) == 0) {
            const auto name = f.substr(8);
            if (!t.find_feature(name)) throw Error(ErrorCode::UnknownColumn, "unknown feature '" + name + "'", "fields");
            features.push_back(name);
        } else {
            throw Error(ErrorCode::InvalidArgument, "unknown field '" + f + "'", "fields");
        }
    }
    const auto stratify = query_value(query, "stratify");
    if (stratify && !t.annotations().count(*stratify)) {
        throw Error(ErrorCode::UnknownAnnotation, "unknown annotation '" + *stratify + "'", "stratify");
    }
    const std::string layer = query_value(query, "layer").value_or(std::string(kFeaturesLayer));
    if (!features.empty() && !t.has_layer(layer)) {
        throw Error(ErrorCode::UnknownLayer, "unknown layer '" + layer + "'", "layer");
    }

    const auto sample = scatter_downsample(t, max, stratify, seed, annotations);
    Json out = {{"dataset", id}, {"n_total", t.n_cells()}, {"n", sample.indices.size()}, {"seed", seed},
                {"indices", sample.indices}};
    if (coords) {
        out["x"] = sample.x;
        out["y"] = sample.y;
    }
    Json ann = Json::object();
    for (const auto& [name, codes] : sample.codes) {
        Json c = Json::array();
        for (auto code : codes) {
            if (code == CategoricalColumn::missing_code) {
                c.push_back(-1);
            } else {
                c.push_back(code);
            }
        }
        ann[name] = {{"categories", t.annotation(name).categories()}, {"codes", c}};
    }
    out["annotations"] = ann;
    Json feat = Json::object();
    const auto& m = t.layer(layer);
    for (const auto& name : features) {
        const auto j = t.feature_index(name);
        Json v = Json::array();
        for (auto i : sample.indices) v.push_back(static_cast<double>(m(i, j)));
        feat[name] = std::move(v);
    }
    out["features"] = feat;
    out["layer"] = layer;
    return json_response(200, std::move(out));
}

Response Service::run_analysis(const std::string& id, const std::string& family, const std::string& kind,
                               const std::string& body) {
    const bool spatial = family == "spatial";
    if (spatial ? !is_spatial_kind(kind) : !is_summary_kind(kind)) {
        return not_found("unknown " + family + " analysis '" + kind + "'");
    }
    const auto ds = find_dataset(id);
    if (!ds) return not_found("unknown dataset '" + id + "'");
    const Json params = parse_body(body);
    if (!params.is_object()) throw Error(ErrorCode::InvalidArgument, "request body must be a JSON object", "body");
    if (kind == "nn-dist" && params.value("include_cells", false) && ds->table.n_cells() > config_.max_payload_cells) {
        return payload_too_large(ds->table.n_cells(), config_.max_payload_cells,
                                 "omit include_cells and use the per-phenotype summary");
    }

    const std::string key =
        id + "\n" + std::to_string(ds->generation) + "\n" + family + "/" + kind + "\n" + params.dump();
    {
        std::lock_guard lock(cache_mutex_);
        auto it = cache_.find(key);
        if (it != cache_.end()) {
            Response r = json_response(200, it->second);
            r.headers["Cache"] = "hit";
            return r;
        }
    }

    const CellTable table = ds->table;
    auto task = [this, table, spatial, kind, params, key]() -> Response {
        try {
            Json result = spatial ? run_spatial(table, kind, params) : run_summary(table, kind, params);
            {
                std::lock_guard lock(cache_mutex_);
                cache_.emplace(key, result);
            }
            Response r = json_response(200, std::move(result));
            r.headers["Cache"] = "miss";
            return r;
        } catch (const Error& e) {
            return validation_error(e);
        } catch (const std::exception& e) {
            const auto eid = "E" + std::to_string(next_error_++);
            std::fprintf(stderr, "[cellscape] internal error %s in %s: %s\n", eid.c_str(), kind.c_str(), e.what());
            return json_response(500, {{"error", "InternalError"}, {"id", eid}});
        }
    };
    std::shared_future<Response> fut = std::async(std::launch::async, std::move(task)).share();
    if (fut.wait_for(config_.job_budget) == std::future_status::ready) return fut.get();

    const std::string job_id = "job-" + std::to_string(next_job_++);
    {
        std::lock_guard lock(jobs_mutex_);
        jobs_[job_id] = Job{fut, key};
    }
    return json_response(202, {{"job", job_id}, {"status", "running"}, {"poll", "/api/jobs/" + job_id}});
}

Response Service::get_job(const std::string& job_id) {
    std::shared_future<Response> fut;
    {
        std::lock_guard lock(jobs_mutex_);
        auto it = jobs_.find(job_id);
        if (it == jobs_.end()) return not_found("unknown job '" + job_id + "'");
        fut = it->second.result;
    }
    if (fut.wait_for(std::chrono::milliseconds(0)) != std::future_status::ready) {
        return json_response(202, {{"job", job_id}, {"status", "running"}});
    }
    const Response& done = fut.get();
    if (done.status != 200) {
        Json body = {{"job", job_id}, {"status", "failed"}, {"error", done.body}};
        return json_response(200, std::move(body));
    }
    return json_response(200, {{"job", job_id}, {"status", "done"}, {"result", done.body}});
}

Response Service::add_annotation(const std::string& id, const std::string& body) {
    const Json p = parse_body(body);
    if (!p.is_object()) throw Error(ErrorCode::InvalidArgument, "request body must be a JSON object", "body");
    for (const auto& [key, v] : p.items()) {
        if (key != "name" && key != "indices" && key != "label" && key != "unselected_label") {
            throw Error(ErrorCode::InvalidArgument, "unknown parameter '" + key + "'", key);
        }
    }
    if (!p.contains("name") || !p["name"].is_string() || p["name"].get<std::string>().empty()) {
        throw Error(ErrorCode::InvalidArgument, "'name' must be a non-empty string", "name");
    }
    if (!p.contains("indices") || !p["indices"].is_array()) {
        throw Error(ErrorCode::InvalidArgument, "'indices' must be an array of cell indices", "indices");
    }
    if (p.contains("label") && !p["label"].is_string()) {
        throw Error(ErrorCode::InvalidArgument, "'label' must be a string", "label");
    }
    if (p.contains("unselected_label") && !p["unselected_label"].is_null() && !p["unselected_label"].is_string()) {
        throw Error(ErrorCode::InvalidArgument, "'unselected_label' must be a string", "unselected_label");
    }
    const auto name = p["name"].get<std::string>();
    const std::string label = p.contains("label") ? p["label"].get<std::string>() : "selected";
    std::optional<std::string> other;
    if (p.contains("unselected_label") && !p["unselected_label"].is_null()) other = p["unselected_label"].get<std::string>();
    if (other && *other == label) {
        throw Error(ErrorCode::InvalidArgument, "'unselected_label' must differ from 'label'", "unselected_label");
    }
    if (p["indices"].size() > config_.max_payload_cells) {
        return payload_too_large(p["indices"].size(), config_.max_payload_cells, "split the selection");
    }

    std::unique_lock lock(datasets_mutex_);
    auto it = datasets_.find(id);
    if (it == datasets_.end()) return not_found("unknown dataset '" + id + "'");
    auto& ds = it->second;
    const std::size_t n = ds.table.n_cells();
    if (ds.table.annotations().count(name)) {
        throw Error(ErrorCode::DuplicateName, "annotation '" + name + "' already exists", "name");
    }
    std::vector<std::optional<std::string>> values(n, other);
    std::size_t selected = 0;
    for (const auto& v : p["indices"]) {
        if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0)) {
            throw Error(ErrorCode::InvalidArgument, "indices must be non-negative integers", "indices");
        }
        const auto i = v.get<std::uint64_t>();
        if (i >= n) throw Error(ErrorCode::InvalidArgument, "index " + std::to_string(i) + " out of range", "indices");
        if (!values[i] || *values[i] != label) ++selected;
        values[i] = label;
    }
    // Fixed category order: selected label first.
    std::vector<std::string> cats{label};
    if (other) cats.push_back(*other);
    std::vector<std::uint32_t> codes(n, CategoricalColumn::missing_code);
    for (std::size_t i = 0; i < n; ++i) {
        if (values[i]) codes[i] = *values[i] == label ? 0 : 1;
    }
    ds.table = ds.table.with_annotation(name, CategoricalColumn(std::move(codes), std::move(cats)))
                   .with_record(make_record("add_annotation",
                                            {{"name", name}, {"label", label}, {"n_selected", selected},
                                             {"unselected_label", other ? Json(*other) : Json(nullptr)}}));
    ds.generation += 1;
    bool persisted = false;
    if (config_.persist_annotations && ds.path) {
        save_container(ds.table, *ds.path);
        persisted = true;
    }
    return json_response(201, {{"dataset", id}, {"annotation", name}, {"n_selected", selected}, {"persisted", persisted}});
}

HttpServer::HttpServer(Service& service) : server_(std::make_unique<httplib::Server>()) {
    auto route = [&service](const httplib::Request& req, httplib::Response& res) {
        std::multimap<std::string, std::string> query(req.params.begin(), req.params.end());
        const Response r = service.handle(req.method, req.path, query, req.body);
        res.status = r.status;
        for (const auto& [k, v] : r.headers) res.set_header(k, v);
        if (r.status != 204) res.set_content(r.body.dump(), "application/json");
    };
    server_->Get(R"(/.*)", route);
    server_->Post(R"(/.*)", route);
    server_->Options(R"(/.*)", route);
}

HttpServer::~HttpServer() = default;

int HttpServer::bind(const std::string& host, int port) {
    const int bound = port == 0 ? server_->bind_to_any_port(host) : (server_->bind_to_port(host, port) ? port : -1);
    if (bound < 0) throw Error(ErrorCode::IoError, "could not listen on " + host + ":" + std::to_string(port), "port");
    return bound;
}

void HttpServer::run() { server_->listen_after_bind(); }

void HttpServer::stop() { server_->stop(); }

void serve_http(Service& service, const std::string& host, int port) {
    HttpServer server(service);
    const int bound = server.bind(host, port);
    std::fprintf(stderr, "[cellscape] listening on %s:%d\n", host.c_str(), bound);
    server.run();
}

}  // namespace cellscape
