#include <fmt/format.h>
#include "httplib.h"

#include "telematics/errors.hpp"
#include "telematics/service.hpp"

namespace telematics {

struct HttpServer::Impl {
    httplib::Server server;
};

HttpServer::HttpServer(const QueryService& service) : impl_(std::make_unique<Impl>()) {
    auto& srv = impl_->server;
    srv.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                             {"Access-Control-Allow-Methods", "GET, OPTIONS"},
                             {"Access-Control-Allow-Headers", "Content-Type"}});
    const QueryService* svc = &service;
    auto handler = [svc](const httplib::Request& req, httplib::Response& res) {
        const HttpResponse r = svc->handle(req.method, req.target);
        res.status = r.status;
        res.set_content(r.body, "application/json");
    };
    srv.Get(R"(/.*)", handler);
    srv.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
    auto& srv = impl_->server;
    if (port == 0) {
        const int bound = srv.bind_to_any_port(host);
        if (bound < 0) throw Error(fmt::format("cannot bind {}", host));
        return bound;
    }
    if (!srv.bind_to_port(host, port)) throw Error(fmt::format("cannot bind {}:{}", host, port));
    return port;
}

void HttpServer::run() { impl_->server.listen_after_bind(); }

void HttpServer::stop() {
    if (impl_ && impl_->server.is_running()) impl_->server.stop();
}

void HttpServer::wait_until_ready() const { impl_->server.wait_until_ready(); }

}  // namespace telematics
