#pragma once

#include <chrono>
#include <memory>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace ctxintel {

struct HttpRequest {
    std::string method = "GET";
    std::string url;
    std::vector<std::pair<std::string, std::string>> headers;
    std::string body;
    std::chrono::milliseconds timeout{30000};
};

struct HttpResponse {
    int status = 0;  // 0: transport-level failure, see `error`
    std::string body;
    std::string error;

    bool transport_failed() const noexcept { return status == 0; }
    /// Worth retrying: transport failures, 408, 429 and 5xx.
    bool transient() const noexcept {
        return status == 0 || status == 408 || status == 429 || status >= 500;
    }
};

class HttpTransport {
public:
    virtual ~HttpTransport() = default;
    virtual HttpResponse send(const HttpRequest& request) = 0;
};

/// cpp-httplib backed transport with TLS support.
std::shared_ptr<HttpTransport> make_http_transport();

struct UrlParts {
    std::string scheme;
    std::string host;
    int port = 0;
    std::string target;  // path + query, always starts with '/'
};

/// Throws InvalidArgument for anything that is not http(s)://host[:port][/...]
UrlParts parse_url(std::string_view url);

std::string url_encode(std::string_view value);

}  // namespace ctxintel
