#pragma once

#include <string>
#include <thread>

#include <httplib.h>

/// Local HTTP server on an ephemeral port, stopped on destruction.
class TestServer {
public:
    template <typename Handler>
    TestServer(const std::string& path, Handler h) {
        server_.Post(path, h);
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }
    ~TestServer() {
        server_.stop();
        thread_.join();
    }
    TestServer(const TestServer&) = delete;
    TestServer& operator=(const TestServer&) = delete;

    std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }

private:
    httplib::Server server_;
    int port_ = 0;
    std::thread thread_;
};
