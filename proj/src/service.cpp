#include "ctxintel/service.hpp"

#include <httplib.h>

#include <atomic>
#include <chrono>
#include <csignal>
#include <ostream>

namespace ctxintel {

namespace {

HttpReply json_reply(int status, const Json& body) { return {status, body.dump(), "application/json", {}}; }

HttpReply error_reply(int status, std::string_view kind, std::string_view message) {
    return json_reply(status, Json{{"error", {{"kind", kind}, {"message", message}}}});
}

std::atomic<bool> g_stop{false};

void on_signal(int) { g_stop = true; }

}  // namespace

ContextualizeService::ContextualizeService(ServiceOptions options) : options_(std::move(options)) {
    if (options_.workers == 0) throw InvalidArgument("service needs at least one worker");
    for (std::size_t i = 0; i < options_.workers; ++i) workers_.emplace_back([this] { worker_loop(); });
}

ContextualizeService::~ContextualizeService() {
    stop();
    {
        std::lock_guard lock(mu_);
        stopping_ = true;
    }
    cv_.notify_all();
    for (auto& t : workers_) t.join();
}

void ContextualizeService::attach(std::shared_ptr<const Agent> agent, Json health) {
    std::lock_guard lock(mu_);
    agent_ = std::move(agent);
    health_ = std::move(health);
}

bool ContextualizeService::ready() const {
    std::lock_guard lock(mu_);
    return agent_ != nullptr;
}

std::size_t ContextualizeService::pending() const {
    std::lock_guard lock(mu_);
    return queue_.size();
}

void ContextualizeService::worker_loop() {
    for (;;) {
        Job job;
        {
            std::unique_lock lock(mu_);
            cv_.wait(lock, [&] { return stopping_ || !queue_.empty(); });
            if (queue_.empty()) return;
            job = std::move(queue_.front());
            queue_.pop_front();
        }
        job();
    }
}

HttpReply ContextualizeService::process(const ThreatReport& trigger) const {
    std::shared_ptr<const Agent> agent;
    {
        std::lock_guard lock(mu_);
        agent = agent_;
    }
    const auto result = agent->run(trigger);
    if (options_.runs_dir) {
        try {
            write_run_artifacts(*options_.runs_dir / safe_dir_name(trigger.report_id), result);
        } catch (const std::exception&) {
            // artifact persistence must not change the response
        }
    }
    const auto& o = result.outcome;
    switch (o.kind) {
        case RunOutcome::Kind::Contextualized: return json_reply(200, *o.intel);
        case RunOutcome::Kind::Discarded: {
            HttpReply r{204, "", "application/json", {}};
            r.headers.emplace_back("X-Discard-Reason", o.reason);
            r.headers.emplace_back("X-Gate-Score", std::to_string(o.gate_score));
            return r;
        }
        case RunOutcome::Kind::Failed: break;
    }
    return error_reply(500, o.failure ? o.failure->kind : "unknown", o.failure ? o.failure->message : "");
}

HttpReply ContextualizeService::handle_contextualize(const std::string& body) {
    if (!ready()) return error_reply(503, "NotReady", "index is not loaded yet");
    ThreatReport trigger;
    try {
        trigger = decode<ThreatReport>(body);
    } catch (const Error& e) {
        return error_reply(400, e.kind(), e.what());
    }
    std::future<HttpReply> reply;
    {
        std::lock_guard lock(mu_);
        if (stopping_) return error_reply(503, "ShuttingDown", "service is stopping");
        if (queue_.size() >= options_.queue_depth) return error_reply(503, "QueueFull", "trigger queue is full");
        queue_.emplace_back([this, trigger] { return process(trigger); });
        reply = queue_.back().get_future();
    }
    cv_.notify_one();
    return reply.get();
}

HttpReply ContextualizeService::handle_health() const {
    std::lock_guard lock(mu_);
    if (!agent_) return json_reply(503, Json{{"status", "starting"}});
    Json body{{"status", "ok"}, {"pending", queue_.size()}};
    for (const auto& [k, v] : health_.items()) body[k] = v;
    return json_reply(200, body);
}

int ContextualizeService::listen(const std::string& host, int port) {
    if (server_) throw InvalidArgument("service is already listening");
    server_ = std::make_unique<httplib::Server>();
    const std::size_t threads = options_.workers + options_.queue_depth + 2;
    server_->new_task_queue = [threads] { return new httplib::ThreadPool(threads); };

    auto send = [](const HttpReply& reply, httplib::Response& res) {
        res.status = reply.status;
        for (const auto& [k, v] : reply.headers) res.set_header(k, v);
        if (!reply.body.empty()) res.set_content(reply.body, reply.content_type);
    };
    server_->Post("/v1/contextualize", [this, send](const httplib::Request& req, httplib::Response& res) {
        send(handle_contextualize(req.body), res);
    });
    server_->Get("/healthz", [this, send](const httplib::Request&, httplib::Response& res) {
        send(handle_health(), res);
    });

    const int bound = port == 0 ? server_->bind_to_any_port(host) : (server_->bind_to_port(host, port) ? port : -1);
    if (bound < 0) {
        server_.reset();
        throw StorageError("cannot bind " + host + ":" + std::to_string(port));
    }
    server_thread_ = std::thread([this] { server_->listen_after_bind(); });
    server_->wait_until_ready();
    return bound;
}

void ContextualizeService::stop() {
    if (!server_) return;
    server_->stop();
    if (server_thread_.joinable()) server_thread_.join();
    server_.reset();
}

int cmd_serve(const Settings& settings, const ServeOptions& options, std::ostream& out, std::ostream& err) {
    try {
        ServiceOptions service_options;
        service_options.workers = settings.backends.workers;
        service_options.queue_depth = settings.backends.queue_depth;
        service_options.runs_dir = options.runs_dir;
        ContextualizeService service(service_options);
        const int port = service.listen(options.host, options.port);
        out << "listening on " << options.host << ':' << port << std::endl;

        if (!LocalKnowledgeStore::exists(options.index_dir))
            throw StorageError("no index at " + options.index_dir.string() + "; build it first with `ctxintel ingest`");
        IndexLock lock(options.index_dir, IndexLock::Kind::Shared);
        const auto engine = build_engine(settings);
        engine->open_index(options.index_dir, LocalKnowledgeStore::Mode::ReadOnly);
        service.attach(engine->agent, Json{{"index_chunks", engine->store->chunk_count()},
                                           {"index_documents", engine->store->document_count()},
                                           {"completion_model", engine->gateway->completion_model_id()},
                                           {"embedding_model", engine->gateway->embedding_model_id()},
                                           {"feed", engine->feed->name()}});
        out << "ready: " << engine->store->chunk_count() << " chunks" << std::endl;

        std::signal(SIGINT, on_signal);
        std::signal(SIGTERM, on_signal);
        while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
        service.stop();
        out << "stopped" << std::endl;
        return kExitOk;
    } catch (const Error& e) {
        err << "serve failed: " << e.kind() << ": " << e.what() << '\n';
        return kExitFailed;
    }
}

}  // namespace ctxintel
