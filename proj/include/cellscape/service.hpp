#pragma once

#include "cellscape/cell_table.hpp"

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>

namespace httplib {
class Server;
}

namespace cellscape {

struct ServiceConfig {
    std::size_t max_payload_cells = 1'000'000;
    std::chrono::milliseconds job_budget{2000};
    std::optional<std::string> allow_origin;
    bool persist_annotations = false;
};

struct Response {
    int status = 200;
    Json body;
    std::map<std::string, std::string> headers;
};

// The HTTP API without the transport. `handle` is safe to call from many
// threads at once.
class Service {
public:
    explicit Service(ServiceConfig config = {});

    // Loads every container under `dir`; the directory name is the dataset id.
    void load_directory(const std::filesystem::path& dir);
    void add_dataset(const std::string& id, CellTable table, std::optional<std::filesystem::path> path = std::nullopt);

    Response handle(const std::string& method, const std::string& path,
                    const std::multimap<std::string, std::string>& query, const std::string& body);

    const ServiceConfig& config() const { return config_; }
    std::size_t cache_size() const;

private:
    struct Dataset {
        CellTable table;
        std::optional<std::filesystem::path> path;
        std::uint64_t generation = 0;
    };
    struct Job {
        std::shared_future<Response> result;
        std::string cache_key;
    };

    Response list_datasets() const;
    Response get_cells(const std::string& id, const std::multimap<std::string, std::string>& query) const;
    Response run_analysis(const std::string& id, const std::string& family, const std::string& kind,
                          const std::string& body);
    Response add_annotation(const std::string& id, const std::string& body);
    Response get_job(const std::string& job_id);
    std::optional<Dataset> find_dataset(const std::string& id) const;

    ServiceConfig config_;
    mutable std::shared_mutex datasets_mutex_;
    std::map<std::string, Dataset> datasets_;
    mutable std::mutex cache_mutex_;
    std::map<std::string, Json> cache_;
    std::mutex jobs_mutex_;
    std::map<std::string, Job> jobs_;
    std::atomic<std::uint64_t> next_job_{1};
    std::atomic<std::uint64_t> next_error_{1};
};

// HTTP transport over a Service. Every route forwards to Service::handle.
class HttpServer {
public:
    explicit HttpServer(Service& service);
    ~HttpServer();

    // Port 0 picks a free port. Returns the bound port.
    int bind(const std::string& host, int port);
    // Blocks until stop() is called from another thread.
    void run();
    void stop();

private:
    std::unique_ptr<httplib::Server> server_;
};

// Serves `service` over HTTP until the process is stopped.
void serve_http(Service& service, const std::string& host, int port);

}  // namespace cellscape
