#pragma once

// Thin helpers over cpp-httplib shared by the live poller and the remote
// embedding client.

#include <chrono>
#include <memory>
#include <string>

#include <httplib.h>

#include "llmverify/error.hpp"

namespace llmverify::http {

/// Splits "http://host:port/prefix" into the scheme-host-port part and the path prefix.
struct Endpoint {
    std::string origin;
    std::string prefix;
};

inline Endpoint split_endpoint(const std::string& url) {
    const auto scheme = url.find("://");
    if (scheme == std::string::npos) throw InvalidInput("endpoint URL needs a scheme: " + url);
    const auto path = url.find('/', scheme + 3);
    Endpoint e;
    if (path == std::string::npos) {
        e.origin = url;
    } else {
        e.origin = url.substr(0, path);
        e.prefix = url.substr(path);
        while (!e.prefix.empty() && e.prefix.back() == '/') e.prefix.pop_back();
    }
    return e;
}

inline std::unique_ptr<httplib::Client> make_client(const Endpoint& e, std::chrono::milliseconds timeout) {
    auto client = std::make_unique<httplib::Client>(e.origin);
    const auto sec = std::chrono::duration_cast<std::chrono::seconds>(timeout);
    const auto usec = std::chrono::duration_cast<std::chrono::microseconds>(timeout - sec);
    client->set_connection_timeout(sec.count(), usec.count());
    client->set_read_timeout(sec.count(), usec.count());
    client->set_write_timeout(sec.count(), usec.count());
    return client;
}

}  // namespace llmverify::http
