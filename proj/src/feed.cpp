#include "ctxintel/feed.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <future>
#include <sstream>
#include <unordered_set>

#include "ctxintel/text.hpp"

namespace ctxintel {

namespace fs = std::filesystem;

namespace {

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw StorageError("cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

ThreatReport normalize_cve(const Json& cve, const std::string& path) {
    if (!cve.is_object()) throw ParseError(path, "cve record is not an object");
    ThreatReport report;
    report.source = ReportSource::NvdCve;

    const auto id = cve.find("id");
    if (id == cve.end() || !id->is_string()) throw ParseError(path + ".id", "missing CVE id");
    report.report_id = id->get<std::string>();
    if (!is_cve_id(report.report_id))
        throw ParseError(path + ".id", "'" + report.report_id + "' is not a CVE identifier");

    if (const auto d = cve.find("descriptions"); d != cve.end() && d->is_array()) {
        for (const auto& entry : *d) {
            if (!entry.is_object() || entry.value("lang", "") != "en") continue;
            const auto value = entry.find("value");
            if (value == entry.end() || !value->is_string()) continue;
            if (!text::trim(value->get_ref<const std::string&>()).empty()) {
                report.description = value->get<std::string>();
                break;
            }
        }
    }
    if (report.description.empty())
        throw ParseError("description", "record " + report.report_id + " has no English description");

    if (const auto p = cve.find("published"); p != cve.end() && !p->is_null()) {
        if (!p->is_string()) throw ParseError(path + ".published", "published is not a string");
        report.published_at = parse_timestamp(p->get<std::string>());
        if (!report.published_at) throw ParseError(path + ".published", "malformed timestamp");
    }

    if (const auto refs = cve.find("references"); refs != cve.end()) {
        if (!refs->is_array()) throw ParseError(path + ".references", "references is not an array");
        for (std::size_t i = 0; i < refs->size(); ++i) {
            const auto& ref = (*refs)[i];
            const auto url = ref.is_object() ? ref.find("url") : ref.end();
            if (!ref.is_object() || url == ref.end() || !url->is_string())
                throw ParseError(path + ".references[" + std::to_string(i) + "].url", "missing url");
            report.references.push_back(url->get<std::string>());
        }
    }

    static const std::unordered_set<std::string> kMapped = {"id", "descriptions", "published",
                                                            "references"};
    for (const auto& [key, value] : cve.items()) {
        if (kMapped.contains(key)) continue;
        report.extra[key] = value.is_string() ? value.get<std::string>() : value.dump();
    }
    return report;
}

}  // namespace

std::vector<ThreatReport> parse_feed_page(std::string_view raw) {
    if (text::trim(raw).empty()) throw ParseError("", "empty feed payload", 0);
    const Json page = parse_json(raw);
    const auto vulns = page.is_object() ? page.find("vulnerabilities") : page.end();
    if (vulns == page.end() || !vulns->is_array())
        throw ParseError("vulnerabilities", "feed page has no vulnerabilities array");
    std::vector<ThreatReport> out;
    for (std::size_t i = 0; i < vulns->size(); ++i) {
        const auto path = "vulnerabilities[" + std::to_string(i) + "]";
        const auto& item = (*vulns)[i];
        if (!item.is_object() || !item.contains("cve")) throw ParseError(path + ".cve", "missing cve object");
        out.push_back(normalize_cve(item.at("cve"), path + ".cve"));
    }
    return out;
}

ThreatReport parse_feed_record(std::string_view raw) {
    if (text::trim(raw).empty()) throw ParseError("", "empty feed payload", 0);
    const Json j = parse_json(raw);
    if (!j.is_object()) throw ParseError("", "feed record is not a JSON object");
    if (j.contains("vulnerabilities")) {
        auto reports = parse_feed_page(raw);
        if (reports.size() != 1)
            throw ParseError("vulnerabilities", "expected exactly one record, found " +
                                                    std::to_string(reports.size()));
        return std::move(reports.front());
    }
    if (j.contains("cve")) return normalize_cve(j.at("cve"), "cve");
    return normalize_cve(j, "");
}

SlidingWindowRateLimiter::SlidingWindowRateLimiter(std::size_t budget, std::chrono::milliseconds window,
                                                   std::shared_ptr<Clock> clock)
    : budget_(budget), window_(window), clock_(std::move(clock)) {
    if (budget_ == 0) throw InvalidArgument("rate budget must be positive");
}

void SlidingWindowRateLimiter::acquire() {
    std::unique_lock lock(mu_);
    for (;;) {
        const auto now = clock_->now();
        while (!recent_.empty() && now - recent_.front() >= window_) recent_.pop_front();
        if (recent_.size() < budget_) {
            recent_.push_back(now);
            history_.push_back(now);
            return;
        }
        const auto wait = recent_.front() + window_ - now;
        lock.unlock();
        clock_->sleep_for(std::max(wait, std::chrono::milliseconds{1}));
        lock.lock();
    }
}

std::vector<Timestamp> SlidingWindowRateLimiter::admissions() const {
    std::lock_guard lock(mu_);
    return history_;
}

ResponseCache::ResponseCache(std::optional<fs::path> dir, std::chrono::milliseconds ttl,
                             std::shared_ptr<Clock> clock)
    : dir_(std::move(dir)), ttl_(ttl), clock_(std::move(clock)) {
    if (dir_) fs::create_directories(*dir_);
}

fs::path ResponseCache::path_for(const std::string& key) const {
    return *dir_ / (text::sha256_hex(key) + ".json");
}

std::optional<std::string> ResponseCache::get(const std::string& key) {
    std::lock_guard lock(mu_);
    const auto now = clock_->now();
    if (const auto it = memory_.find(key); it != memory_.end()) {
        if (now - it->second.stored_at < ttl_) return it->second.body;
        memory_.erase(it);
    }
    if (!dir_) return std::nullopt;
    const auto path = path_for(key);
    if (!fs::exists(path)) return std::nullopt;
    try {
        const auto j = Json::parse(read_file(path));
        const auto stored = parse_timestamp(j.at("stored_at").get<std::string>());
        if (!stored || j.at("key").get<std::string>() != key || now - *stored >= ttl_) return std::nullopt;
        auto body = j.at("body").get<std::string>();
        memory_[key] = {*stored, body};
        return body;
    } catch (const std::exception&) {
        return std::nullopt;  // unreadable entries are treated as misses
    }
}

void ResponseCache::put(const std::string& key, const std::string& body) {
    std::lock_guard lock(mu_);
    const auto now = clock_->now();
    memory_[key] = {now, body};
    if (!dir_) return;
    const auto path = path_for(key);
    const auto tmp = fs::path(path.string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw StorageError("cannot write cache entry " + tmp.string());
        out << Json{{"key", key}, {"stored_at", format_timestamp(now)}, {"body", body}}.dump();
    }
    fs::rename(tmp, path);
}

NvdOptions NvdOptions::from_env() {
    NvdOptions o;
    if (const char* key = std::getenv("NVD_API_KEY")) o.api_key = key;
    return o;
}

NvdFeed::NvdFeed(NvdOptions options, std::shared_ptr<HttpTransport> transport, std::shared_ptr<Clock> clock)
    : options_(std::move(options)), transport_(std::move(transport)), clock_(clock),
      limiter_(options_.effective_budget(), options_.window, clock),
      cache_(options_.cache_dir, options_.cache_ttl, clock) {}

NvdFeed::Fetched NvdFeed::get(const std::string& url) {
    if (auto cached = cache_.get(url)) return {std::move(*cached), 200, true};

    HttpRequest request{"GET", url, {}, {}, options_.timeout};
    if (!options_.api_key.empty()) request.headers.emplace_back("apiKey", options_.api_key);

    auto backoff = options_.initial_backoff;
    HttpResponse response;
    for (int attempt = 1; attempt <= std::max(1, options_.max_attempts); ++attempt) {
        limiter_.acquire();
        ++upstream_requests_;
        response = transport_->send(request);
        // The feed answers 403 when its own rate limit trips.
        const bool retry = response.transient() || response.status == 403;
        if (!retry) break;
        if (attempt < options_.max_attempts) {
            clock_->sleep_for(backoff);
            backoff *= 2;
        }
    }
    if (response.status == 200) {
        cache_.put(url, response.body);
        return {std::move(response.body), 200, false};
    }
    if (response.status == 404) return {{}, 404, false};
    if (response.transport_failed())
        throw FeedUnavailable("vulnerability feed unreachable: " + response.error);
    throw FeedUnavailable("vulnerability feed returned HTTP " + std::to_string(response.status));
}

ThreatReport NvdFeed::fetch_by_id(std::string_view cve_id) {
    const auto fetched = get(options_.base_url + "?cveId=" + url_encode(cve_id));
    if (fetched.status == 404) throw NotFound("no feed record for " + std::string(cve_id));
    auto reports = parse_feed_page(fetched.body);
    for (auto& r : reports)
        if (r.report_id == cve_id) return std::move(r);
    throw NotFound("no feed record for " + std::string(cve_id));
}

FeedPage NvdFeed::search_keyword(std::string_view keyword, int limit) {
    const auto url = options_.base_url + "?keywordSearch=" + url_encode(keyword) +
                     "&resultsPerPage=" + std::to_string(limit) + "&startIndex=0";
    const auto fetched = get(url);
    FeedPage page;
    page.cache_hit = fetched.cache_hit;
    if (fetched.status == 404) return page;
    page.reports = parse_feed_page(fetched.body);
    if (page.reports.size() > static_cast<std::size_t>(limit)) page.reports.resize(static_cast<std::size_t>(limit));
    return page;
}

StubFeed::StubFeed(const fs::path& fixture_dir) {
    if (!fs::is_directory(fixture_dir)) throw StorageError("feed fixture directory not found: " + fixture_dir.string());
    for (const auto& entry : fs::directory_iterator(fixture_dir)) {
        if (!entry.is_regular_file()) continue;
        auto name = entry.path().filename().string();
        if (name.ends_with(".json")) name.resize(name.size() - 5);
        if (!is_cve_id(name)) continue;
        auto report = parse_feed_record(read_file(entry.path()));
        if (report.report_id != name)
            throw ParseError("id", "fixture " + entry.path().string() + " holds " + report.report_id);
        reports_.emplace(name, std::move(report));
    }
}

StubFeed::StubFeed(std::vector<ThreatReport> reports) {
    for (auto& r : reports) {
        auto id = r.report_id;
        reports_.emplace(std::move(id), std::move(r));
    }
}

ThreatReport StubFeed::fetch_by_id(std::string_view cve_id) {
    ++requests_;
    const auto it = reports_.find(std::string(cve_id));
    if (it == reports_.end()) throw NotFound("no feed record for " + std::string(cve_id));
    return it->second;
}

FeedPage StubFeed::search_keyword(std::string_view keyword, int limit) {
    ++requests_;
    std::vector<std::string> words;
    std::istringstream in{text::to_lower(keyword)};
    for (std::string w; in >> w;) words.push_back(w);
    FeedPage page;
    if (words.empty()) return page;
    for (const auto& [id, report] : reports_) {
        if (page.reports.size() >= static_cast<std::size_t>(limit)) break;
        const auto haystack = text::to_lower(report.description);
        const bool all = std::all_of(words.begin(), words.end(), [&](const std::string& w) {
            return haystack.find(w) != std::string::npos;
        });
        if (all) page.reports.push_back(report);
    }
    return page;
}

void to_json(Json& j, const GlobalQueryLog& v) {
    j = Json{{"keyword", v.keyword},
             {"requested_at", format_timestamp(v.requested_at)},
             {"result_ids", v.result_ids},
             {"cache_hit", v.cache_hit}};
    if (v.error) j["error"] = *v.error;
}

GlobalRepository::GlobalRepository(std::shared_ptr<VulnerabilityFeed> feed, std::shared_ptr<Clock> clock,
                                   std::size_t max_concurrency)
    : feed_(std::move(feed)), clock_(std::move(clock)), max_concurrency_(std::max<std::size_t>(1, max_concurrency)) {}

ThreatReport GlobalRepository::fetch_by_id(std::string_view cve_id) {
    if (!is_cve_id(cve_id)) throw InvalidArgument("'" + std::string(cve_id) + "' is not a CVE identifier");
    return feed_->fetch_by_id(cve_id);
}

GlobalSearchResult GlobalRepository::search_keywords(const QuerySet& queries, int limit) {
    if (queries.keywords.empty()) throw InvalidArgument("search_keywords requires at least one keyword");
    if (limit < 1) throw InvalidArgument("search limit must be >= 1");

    struct Outcome {
        FeedPage page;
        std::optional<std::string> error;
        Timestamp requested_at{};
    };
    auto run_one = [&](const std::string& keyword) {
        Outcome o;
        o.requested_at = clock_->now();
        try {
            o.page = feed_->search_keyword(keyword, limit);
            if (o.page.reports.size() > static_cast<std::size_t>(limit))
                o.page.reports.resize(static_cast<std::size_t>(limit));
        } catch (const Error& e) {
            o.error = e.kind() + ": " + e.what();
        }
        return o;
    };

    std::vector<Outcome> outcomes(queries.keywords.size());
    for (std::size_t begin = 0; begin < queries.keywords.size(); begin += max_concurrency_) {
        const auto end = std::min(queries.keywords.size(), begin + max_concurrency_);
        if (end - begin == 1) {
            outcomes[begin] = run_one(queries.keywords[begin]);
            continue;
        }
        std::vector<std::future<Outcome>> batch;
        for (auto i = begin; i < end; ++i)
            batch.push_back(std::async(std::launch::async, run_one, std::cref(queries.keywords[i])));
        for (auto i = begin; i < end; ++i) outcomes[i] = batch[i - begin].get();
    }

    GlobalSearchResult result;
    std::unordered_set<std::string> seen;
    for (std::size_t i = 0; i < outcomes.size(); ++i) {
        GlobalQueryLog log{queries.keywords[i], outcomes[i].requested_at, {}, outcomes[i].page.cache_hit,
                           outcomes[i].error};
        for (auto& report : outcomes[i].page.reports) {
            log.result_ids.push_back(report.report_id);
            if (seen.insert(report.report_id).second) result.reports.push_back(std::move(report));
        }
        result.logs.push_back(std::move(log));
    }
    return result;
}

}  // namespace ctxintel
