#include <httplib.h>

#include <cctype>
#include <charconv>

#include "ctxintel/errors.hpp"
#include "ctxintel/http.hpp"

namespace ctxintel {

namespace {

class HttplibTransport final : public HttpTransport {
public:
    HttpResponse send(const HttpRequest& request) override {
        UrlParts url;
        try {
            url = parse_url(request.url);
        } catch (const InvalidArgument& e) {
            return {0, {}, e.what()};
        }
        httplib::Client client(url.scheme + "://" + url.host + ":" + std::to_string(url.port));
        const auto secs = std::chrono::duration_cast<std::chrono::seconds>(request.timeout);
        client.set_connection_timeout(secs);
        client.set_read_timeout(secs);
        client.set_write_timeout(secs);
        client.set_follow_location(true);

        httplib::Headers headers;
        std::string content_type = "application/json";
        for (const auto& [k, v] : request.headers) {
            if (k == "Content-Type") content_type = v;
            else headers.emplace(k, v);
        }

        httplib::Result result{nullptr, httplib::Error::Unknown};
        if (request.method == "GET") result = client.Get(url.target, headers);
        else if (request.method == "POST")
            result = client.Post(url.target, headers, request.body, content_type);
        else return {0, {}, "unsupported method " + request.method};

        if (!result) return {0, {}, httplib::to_string(result.error())};
        return {result->status, result->body, {}};
    }
};

}  // namespace

std::shared_ptr<HttpTransport> make_http_transport() { return std::make_shared<HttplibTransport>(); }

UrlParts parse_url(std::string_view url) {
    UrlParts out;
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string_view::npos) throw InvalidArgument("url without scheme: " + std::string(url));
    out.scheme = std::string(url.substr(0, scheme_end));
    if (out.scheme != "http" && out.scheme != "https")
        throw InvalidArgument("unsupported url scheme: " + out.scheme);
    auto rest = url.substr(scheme_end + 3);
    const auto slash = rest.find('/');
    auto authority = rest.substr(0, slash);
    out.target = slash == std::string_view::npos ? "/" : std::string(rest.substr(slash));
    out.port = out.scheme == "https" ? 443 : 80;
    if (const auto colon = authority.rfind(':'); colon != std::string_view::npos) {
        const auto port_text = authority.substr(colon + 1);
        int port = 0;
        const auto [ptr, ec] = std::from_chars(port_text.data(), port_text.data() + port_text.size(), port);
        if (ec != std::errc{} || ptr != port_text.data() + port_text.size() || port <= 0 || port > 65535)
            throw InvalidArgument("bad port in url: " + std::string(url));
        out.port = port;
        authority = authority.substr(0, colon);
    }
    if (authority.empty()) throw InvalidArgument("url without host: " + std::string(url));
    out.host = std::string(authority);
    return out;
}

std::string url_encode(std::string_view value) {
    static constexpr char kHex[] = "0123456789ABCDEF";
    std::string out;
    for (unsigned char c : value) {
        if (std::isalnum(c) || c == '-' || c == '_' || c == '.' || c == '~') {
            out.push_back(static_cast<char>(c));
        } else {
            out.push_back('%');
            out.push_back(kHex[c >> 4]);
            out.push_back(kHex[c & 0xF]);
        }
    }
    return out;
}

}  // namespace ctxintel
