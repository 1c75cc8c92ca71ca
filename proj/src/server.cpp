#include <cloudroid/errors.hpp>
#include <cloudroid/transport.hpp>

#include <boost/asio/ip/tcp.hpp>
#include <boost/asio/strand.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>
#include <spdlog/spdlog.h>

#include <charconv>

namespace cloudroid {

  namespace asio = boost::asio;
  namespace beast = boost::beast;
  namespace http = beast::http;
  namespace websocket = beast::websocket;
  using tcp = asio::ip::tcp;

  Endpoint parse_url(std::string_view url)
  {
    Endpoint ep;
    auto sep = url.find("://");
    if (sep == std::string_view::npos)
      throw Error("url '" + std::string(url) + "' has no scheme");
    ep.scheme = std::string(url.substr(0, sep));
    if (ep.scheme != "ws" && ep.scheme != "http")
      throw Error("unsupported url scheme '" + ep.scheme + "'");
    auto rest = url.substr(sep + 3);
    auto slash = rest.find('/');
    auto authority = rest.substr(0, slash);
    ep.path = slash == std::string_view::npos ? "/" : std::string(rest.substr(slash));
    auto colon = authority.rfind(':');
    if (colon == std::string_view::npos) {
      ep.host = std::string(authority);
      ep.port = 80;
    } else {
      ep.host = std::string(authority.substr(0, colon));
      auto digits = authority.substr(colon + 1);
      unsigned value = 0;
      auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), value);
      if (ec != std::errc{} || ptr != digits.data() + digits.size() || value > 65535)
        throw Error("bad port in url '" + std::string(url) + "'");
      ep.port = static_cast<std::uint16_t>(value);
    }
    if (ep.host.empty())
      throw Error("url '" + std::string(url) + "' has no host");
    return ep;
  }

  namespace {

    bool authorized(const http::request<http::string_body>& req, const std::string& token)
    {
      if (token.empty())
        return true;
      auto it = req.find(http::field::authorization);
      return it != req.end() && it->value() == "Bearer " + token;
    }

    class WsConnection : public std::enable_shared_from_this<WsConnection> {
    public:
      WsConnection(tcp::socket&& socket, ServicePortal& portal)
        : _ws(std::move(socket)), _portal(portal)
      {
      }

      void run(http::request<http::string_body> req)
      {
        beast::error_code ec;
        auto remote = beast::get_lowest_layer(_ws).socket().remote_endpoint(ec);
        _peer = ec ? "unknown" : remote.address().to_string() + ":" + std::to_string(remote.port());
        _ws.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
        _ws.text(true);
        _ws.async_accept(req, beast::bind_front_handler(&WsConnection::on_accept, shared_from_this()));
      }

    private:
      void on_accept(beast::error_code ec)
      {
        if (ec) {
          spdlog::debug("ws accept failed: {}", ec.message());
          return;
        }
        std::weak_ptr<WsConnection> weak = shared_from_this();
        _session = _portal.open_session(_peer, [weak](const protocol::Envelope& e) {
          if (auto self = weak.lock())
            self->send(protocol::encode(e));
        });
        do_read();
      }

      void do_read()
      {
        _ws.async_read(_buffer, beast::bind_front_handler(&WsConnection::on_read, shared_from_this()));
      }

      void on_read(beast::error_code ec, std::size_t)
      {
        if (ec) {
          finish();
          return;
        }
        auto text = beast::buffers_to_string(_buffer.data());
        _buffer.consume(_buffer.size());
        try {
          _portal.handle(*_session, text);
        } catch (const std::exception& e) {
          spdlog::error("session {}: {}", _session->id(), e.what());
        }
        do_read();
      }

      void send(std::string frame)
      {
        asio::post(_ws.get_executor(), [self = shared_from_this(), frame = std::move(frame)]() mutable {
          if (self->_closed)
            return;
          self->_queue.push_back(std::move(frame));
          if (self->_queue.size() == 1)
            self->do_write();
        });
      }

      void do_write()
      {
        _ws.async_write(asio::buffer(_queue.front()),
                        beast::bind_front_handler(&WsConnection::on_write, shared_from_this()));
      }

      void on_write(beast::error_code ec, std::size_t)
      {
        if (ec) {
          finish();
          return;
        }
        _queue.pop_front();
        if (!_queue.empty())
          do_write();
      }

      void finish()
      {
        if (_closed)
          return;
        _closed = true;
        _queue.clear();
        if (_session)
          _portal.close_session(_session->id());
      }

      websocket::stream<beast::tcp_stream> _ws;
      ServicePortal& _portal;
      beast::flat_buffer _buffer;
      std::deque<std::string> _queue;
      std::shared_ptr<Session> _session;
      std::string _peer;
      bool _closed = false;
    };

    class HttpConnection : public std::enable_shared_from_this<HttpConnection> {
    public:
      HttpConnection(tcp::socket&& socket, ServicePortal& portal, const std::string& token)
        : _stream(std::move(socket)), _portal(portal), _token(token)
      {
      }

      void run()
      {
        asio::dispatch(_stream.get_executor(), beast::bind_front_handler(&HttpConnection::do_read, shared_from_this()));
      }

    private:
      void do_read()
      {
        _req = {};
        _stream.expires_after(std::chrono::seconds(30));
        http::async_read(_stream, _buffer, _req, beast::bind_front_handler(&HttpConnection::on_read, shared_from_this()));
      }

      void on_read(beast::error_code ec, std::size_t)
      {
        if (ec) {
          beast::error_code ignored;
          _stream.socket().shutdown(tcp::socket::shutdown_both, ignored);
          return;
        }
        if (!authorized(_req, _token)) {
          respond(401, R"({"error":"missing or invalid bearer token"})");
          return;
        }
        if (websocket::is_upgrade(_req)) {
          auto target = std::string(_req.target());
          if (target.substr(0, target.find('?')) != "/ws") {
            respond(404, R"({"error":"websocket endpoint is /ws"})");
            return;
          }
          _stream.expires_never();
          std::make_shared<WsConnection>(_stream.release_socket(), _portal)->run(std::move(_req));
          return;
        }
        RestRequest request{std::string(_req.method_string()), std::string(_req.target()), _req.body()};
        RestResponse result;
        try {
          result = management_api(_portal, request);
        } catch (const std::exception& e) {
          spdlog::error("management api: {}", e.what());
          result = {500, nlohmann::json{{"error", e.what()}}.dump()};
        }
        respond(result.status, std::move(result.body), result.content_type);
      }

      void respond(int status, std::string body, const std::string& content_type = "application/json")
      {
        auto res = std::make_shared<http::response<http::string_body>>(static_cast<http::status>(status),
                                                                       _req.version());
        res->set(http::field::server, "cloudroid");
        if (status != 204) {
          res->set(http::field::content_type, content_type);
          res->body() = std::move(body);
        }
        if (status == 401)
          res->set(http::field::www_authenticate, "Bearer");
        res->keep_alive(_req.keep_alive());
        res->prepare_payload();
        http::async_write(_stream, *res,
                          [self = shared_from_this(), res](beast::error_code ec, std::size_t) {
                            if (ec || !res->keep_alive()) {
                              beast::error_code ignored;
                              self->_stream.socket().shutdown(tcp::socket::shutdown_send, ignored);
                              return;
                            }
                            self->do_read();
                          });
      }

      beast::tcp_stream _stream;
      ServicePortal& _portal;
      const std::string& _token;
      beast::flat_buffer _buffer;
      http::request<http::string_body> _req;
    };

  } // namespace

  struct PortalServer::Impl {
    Impl(ServicePortal& p, ServerConfig c) : portal(p), config(std::move(c)), acceptor(asio::make_strand(ioc)) {}

    void do_accept()
    {
      acceptor.async_accept(asio::make_strand(ioc), [this](beast::error_code ec, tcp::socket socket) {
        if (ec) {
          if (ec != asio::error::operation_aborted)
            spdlog::warn("accept failed: {}", ec.message());
          if (!acceptor.is_open())
            return;
        } else {
          std::make_shared<HttpConnection>(std::move(socket), portal, config.token)->run();
        }
        do_accept();
      });
    }

    ServicePortal& portal;
    ServerConfig config;
    asio::io_context ioc;
    tcp::acceptor acceptor;
    std::vector<std::thread> threads;
    bool running = false;
  };

  PortalServer::PortalServer(ServicePortal& portal, ServerConfig config)
    : _impl(std::make_unique<Impl>(portal, std::move(config)))
  {
  }

  PortalServer::~PortalServer() { stop(); }

  void PortalServer::start()
  {
    auto& impl = *_impl;
    if (impl.running)
      return;
    beast::error_code ec;
    auto address = asio::ip::make_address(impl.config.address, ec);
    if (ec)
      throw Error("bad listen address '" + impl.config.address + "': " + ec.message());
    tcp::endpoint endpoint{address, impl.config.port};
    impl.acceptor.open(endpoint.protocol(), ec);
    if (!ec)
      impl.acceptor.set_option(asio::socket_base::reuse_address(true), ec);
    if (!ec)
      impl.acceptor.bind(endpoint, ec);
    if (!ec)
      impl.acceptor.listen(asio::socket_base::max_listen_connections, ec);
    if (ec)
      throw Error("cannot listen on " + impl.config.address + ":" + std::to_string(impl.config.port) + ": " +
                  ec.message());
    _port = impl.acceptor.local_endpoint().port();
    impl.running = true;
    impl.do_accept();
    for (int i = 0; i < std::max(1, impl.config.threads); ++i)
      impl.threads.emplace_back([&impl] { impl.ioc.run(); });
    spdlog::info("portal listening on {}:{}", impl.config.address, _port);
  }

  void PortalServer::stop()
  {
    auto& impl = *_impl;
    if (!impl.running)
      return;
    impl.running = false;
    asio::post(impl.acceptor.get_executor(), [&impl] {
      beast::error_code ignored;
      impl.acceptor.close(ignored);
    });
    impl.ioc.stop();
    for (auto& t : impl.threads)
      t.join();
    impl.threads.clear();
  }

} // namespace cloudroid
