#ifndef HILSYNTH_SERVER_HPP
#define HILSYNTH_SERVER_HPP

#include <atomic>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <boost/asio/ip/tcp.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

#include "hilsynth/service.hpp"

namespace hilsynth::service {

namespace beast = boost::beast;
namespace http = boost::beast::http;
namespace websocket = boost::beast::websocket;
namespace asio = boost::asio;
using tcp = asio::ip::tcp;

/**
 * Blocking HTTP/1.1 + WebSocket front end for App: one acceptor thread and
 * one thread per connection. Port 0 binds an ephemeral port.
 */
class Server {
public:
    Server(App& app, const std::string& address, unsigned short port)
        : app_(app), acceptor_(ioc_, tcp::endpoint(asio::ip::make_address(address), port)) {}

    ~Server() { stop(); }

    Server(const Server&) = delete;
    Server& operator=(const Server&) = delete;

    unsigned short port() const { return acceptor_.local_endpoint().port(); }

    void start() {
        accept_thread_ = std::thread([this] { accept_loop(); });
    }

    /// Blocks the caller until stop() is called from elsewhere.
    void run() { accept_loop(); }

    void stop() {
        if (stopping_.exchange(true)) return;
        beast::error_code ec;
        // a blocking accept() is not woken by close(); poke it with a throwaway connection
        if (accept_thread_.joinable()) {
            auto ep = acceptor_.local_endpoint(ec);
            if (!ec) {
                if (ep.address().is_unspecified())
                    ep.address(ep.address().is_v6() ? asio::ip::address(asio::ip::address_v6::loopback())
                                                     : asio::ip::address(asio::ip::address_v4::loopback()));
                tcp::socket poke(ioc_);
                poke.connect(ep, ec);
            }
        }
        acceptor_.close(ec);
        if (accept_thread_.joinable()) accept_thread_.join();
        std::vector<std::thread> threads;
        {
            std::lock_guard lock(mu_);
            for (auto& s : sockets_) {
                if (auto sock = s.lock()) {
                    sock->shutdown(tcp::socket::shutdown_both, ec);
                    sock->close(ec);
                }
            }
            threads.swap(threads_);
        }
        for (auto& t : threads) t.join();
    }

private:
    void accept_loop() {
        while (!stopping_) {
            auto socket = std::make_shared<tcp::socket>(ioc_);
            beast::error_code ec;
            acceptor_.accept(*socket, ec);
            if (ec) {
                if (stopping_) return;
                continue;
            }
            std::lock_guard lock(mu_);
            sockets_.push_back(socket);
            threads_.emplace_back([this, socket] { serve(socket); });
        }
    }

    static std::string ws_session_id(std::string_view target) {
        const auto t = Target::parse(target);
        if (t.is({"sessions", "*", "ws"})) return t.segments[1];
        return {};
    }

    void serve(std::shared_ptr<tcp::socket> socket) {
        beast::error_code ec;
        beast::flat_buffer buffer;
        for (;;) {
            http::request<http::string_body> req;
            http::read(*socket, buffer, req, ec);
            if (ec) break;
            if (websocket::is_upgrade(req)) {
                const auto id = ws_session_id(std::string_view(req.target().data(), req.target().size()));
                if (!id.empty() && app_.session_exists(id)) {
                    serve_ws(*socket, std::move(req), id);
                    return;
                }
                http::response<http::string_body> res{http::status::not_found, req.version()};
                res.set(http::field::content_type, "application/json");
                res.body() = json{{"v", kSchemaVersion}, {"error", "NotFound"}, {"message", "no such session"}}.dump();
                res.prepare_payload();
                http::write(*socket, res, ec);
                break;
            }
            const auto r = app_.handle({std::string(req.method_string()), std::string(req.target().data(), req.target().size()), req.body()});
            http::response<http::string_body> res{static_cast<http::status>(r.status), req.version()};
            res.set(http::field::content_type, r.content_type);
            res.keep_alive(req.keep_alive());
            res.body() = r.body;
            res.prepare_payload();
            http::write(*socket, res, ec);
            if (ec || !res.keep_alive()) break;
        }
        socket->shutdown(tcp::socket::shutdown_send, ec);
    }

    /// Lockstep: the current frame on connect, then exactly one frame per client message.
    void serve_ws(tcp::socket& socket, http::request<http::string_body> req, const std::string& id) {
        websocket::stream<tcp::socket&> ws(socket);  // socket stays owned here so stop() can close it
        beast::error_code ec;
        ws.accept(req, ec);
        if (ec) {
            app_.ws_closed(id);
            return;
        }
        ws.text(true);
        ws.write(asio::buffer(app_.current_frame(id).dump()), ec);
        while (!ec) {
            beast::flat_buffer buffer;
            ws.read(buffer, ec);
            if (ec) break;
            const auto reply = app_.ws_message(id, beast::buffers_to_string(buffer.data()));
            ws.write(asio::buffer(reply.dump()), ec);
        }
        app_.ws_closed(id);
    }

    App& app_;
    asio::io_context ioc_;
    tcp::acceptor acceptor_;
    std::atomic<bool> stopping_{false};
    std::thread accept_thread_;
    std::mutex mu_;
    std::vector<std::thread> threads_;
    std::vector<std::weak_ptr<tcp::socket>> sockets_;
};

} // namespace hilsynth::service

#endif // HILSYNTH_SERVER_HPP
