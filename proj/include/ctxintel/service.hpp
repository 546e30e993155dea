#pragma once

// Long-running trigger endpoint:
//   POST /v1/contextualize  ThreatReport JSON -> 200 ContextualizedIntel,
//                           204 + X-Discard-Reason, 400 malformed, 500 failed,
//                           503 not ready or queue full
//   GET  /healthz           200 once an index is attached, 503 before
// There is no authentication; bind to a trusted interface.

#include <condition_variable>
#include <deque>
#include <filesystem>
#include <functional>
#include <future>
#include <iosfwd>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "ctxintel/agent.hpp"
#include "ctxintel/app.hpp"

namespace httplib {
class Server;
}

namespace ctxintel {

struct HttpReply {
    int status = 200;
    std::string body;
    std::string content_type = "application/json";
    std::vector<std::pair<std::string, std::string>> headers;
};

struct ServiceOptions {
    std::size_t workers = 2;
    std::size_t queue_depth = 32;
    std::optional<std::filesystem::path> runs_dir;  // run artifacts per trigger when set
};

class ContextualizeService {
public:
    explicit ContextualizeService(ServiceOptions options = {});
    ~ContextualizeService();
    ContextualizeService(const ContextualizeService&) = delete;
    ContextualizeService& operator=(const ContextualizeService&) = delete;

    /// Makes the service ready. `health` is echoed by /healthz.
    void attach(std::shared_ptr<const Agent> agent, Json health = Json::object());
    bool ready() const;

    /// Socket-free request handling; blocks until a worker finishes.
    HttpReply handle_contextualize(const std::string& body);
    HttpReply handle_health() const;

    /// Binds (port 0 picks a free one) and serves on a background thread.
    /// Returns the bound port. Throws StorageError when binding fails.
    int listen(const std::string& host, int port);
    void stop();

    std::size_t pending() const;

private:
    using Job = std::packaged_task<HttpReply()>;

    void worker_loop();
    HttpReply process(const ThreatReport& trigger) const;

    ServiceOptions options_;
    mutable std::mutex mu_;
    std::condition_variable cv_;
    std::deque<Job> queue_;
    bool stopping_ = false;
    std::shared_ptr<const Agent> agent_;
    Json health_;
    std::vector<std::thread> workers_;

    std::unique_ptr<httplib::Server> server_;
    std::thread server_thread_;
};

struct ServeOptions {
    std::filesystem::path index_dir;
    std::string host = "127.0.0.1";
    int port = 8080;
    std::optional<std::filesystem::path> runs_dir;
};

/// Serves until SIGINT or SIGTERM.
int cmd_serve(const Settings& settings, const ServeOptions& options, std::ostream& out, std::ostream& err);

}  // namespace ctxintel
