// cpp-httplib backed transport. Kept in its own translation unit so the
// heavy header is compiled once.
#include <httplib.h>

#include "ods/gateway.hpp"

namespace ods {

namespace {

struct SplitUrl {
    std::string origin;  // scheme://host[:port]
    std::string path;    // /path?query
};

SplitUrl split_url(const std::string& url) {
    auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw TransportError("not an absolute URL: " + url, false);
    auto path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) return {url, "/"};
    return {url.substr(0, path_start), url.substr(path_start)};
}

}  // namespace

HttpResponse LiveHttpTransport::send(const HttpRequest& req) {
    auto [origin, path] = split_url(req.url);
    httplib::Client cli(origin);
    auto secs = static_cast<time_t>(req.timeout_s);
    auto usecs = static_cast<time_t>((req.timeout_s - static_cast<double>(secs)) * 1e6);
    cli.set_connection_timeout(secs, usecs);
    cli.set_read_timeout(secs, usecs);
    cli.set_write_timeout(secs, usecs);
    cli.set_follow_location(true);

    httplib::Headers headers;
    std::string content_type = "application/octet-stream";
    for (const auto& [k, v] : req.headers) {
        if (k == "Content-Type") content_type = v;
        else headers.emplace(k, v);
    }

    httplib::Result res;
    if (req.method == "POST") res = cli.Post(path, headers, req.body, content_type);
    else res = cli.Get(path, headers);

    if (!res) {
        auto err = res.error();
        bool timeout = err == httplib::Error::Read || err == httplib::Error::Write ||
                       err == httplib::Error::ConnectionTimeout;
        throw TransportError("http " + req.method + " " + req.url + ": " + httplib::to_string(err),
                             timeout);
    }
    return {res->status, res->body};
}

}  // namespace ods
