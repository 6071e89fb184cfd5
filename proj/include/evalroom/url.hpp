#pragma once

#include <optional>
#include <string>
#include <string_view>

namespace evalroom {

/// The subset of URLs bot endpoints and public instance addresses may use:
/// scheme://host[:port][/path] with scheme http, https or inproc.
struct Url {
    std::string scheme;
    std::string host;
    int port = 0; // 0 when absent
    std::string path; // "" or starts with '/', no trailing slash

    /// scheme://host[:port]
    std::string origin() const;
};

std::optional<Url> parse_url(std::string_view text);

/// Percent-encodes everything outside the RFC 3986 unreserved set.
std::string url_encode(std::string_view text);

} // namespace evalroom
