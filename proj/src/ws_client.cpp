#include <cloudroid/errors.hpp>
#include <cloudroid/transport.hpp>

#include <boost/asio/connect.hpp>
#include <boost/asio/ip/tcp.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

namespace cloudroid {

  namespace asio = boost::asio;
  namespace beast = boost::beast;
  namespace http = beast::http;
  namespace websocket = beast::websocket;
  using tcp = asio::ip::tcp;

  struct WsClient::Impl : std::enable_shared_from_this<WsClient::Impl> {
    Impl() : ws(ioc) {}

    void do_read()
    {
      ws.async_read(buffer, [self = shared_from_this()](beast::error_code ec, std::size_t) {
        if (ec) {
          self->closed_by_peer();
          return;
        }
        auto text = beast::buffers_to_string(self->buffer.data());
        self->buffer.consume(self->buffer.size());
        if (self->on_message) {
          self->on_message(std::move(text));
        } else {
          std::lock_guard lock(self->mutex);
          self->inbox.push_back(std::move(text));
          self->cv.notify_all();
        }
        self->do_read();
      });
    }

    void do_write()
    {
      ws.async_write(asio::buffer(outbox.front()), [self = shared_from_this()](beast::error_code ec, std::size_t) {
        if (ec) {
          self->closed_by_peer();
          return;
        }
        self->outbox.pop_front();
        if (!self->outbox.empty())
          self->do_write();
      });
    }

    void closed_by_peer()
    {
      CloseHandler handler;
      {
        std::lock_guard lock(mutex);
        if (!open)
          return;
        open = false;
        handler = std::move(on_close);
        cv.notify_all();
      }
      outbox.clear();
      if (handler)
        handler();
    }

    asio::io_context ioc;
    websocket::stream<tcp::socket> ws;
    beast::flat_buffer buffer;
    std::deque<std::string> outbox;
    MessageHandler on_message;
    CloseHandler on_close;
    std::mutex mutex;
    std::condition_variable cv;
    std::deque<std::string> inbox;
    bool open = false;
    std::thread thread;
  };

  WsClient::WsClient(const std::string& url, const std::string& token, MessageHandler on_message,
                     CloseHandler on_close)
    : _impl(std::make_shared<Impl>())
  {
    auto ep = parse_url(url);
    auto& impl = *_impl;
    impl.on_message = std::move(on_message);
    impl.on_close = std::move(on_close);
    try {
      tcp::resolver resolver(impl.ioc);
      auto results = resolver.resolve(ep.host, std::to_string(ep.port));
      asio::connect(impl.ws.next_layer(), results);
      impl.ws.next_layer().set_option(tcp::no_delay(true));
      impl.ws.set_option(websocket::stream_base::decorator([token](websocket::request_type& req) {
        if (!token.empty())
          req.set(http::field::authorization, "Bearer " + token);
      }));
      impl.ws.text(true);
      impl.ws.handshake(ep.host + ":" + std::to_string(ep.port), ep.path);
    } catch (const boost::system::system_error& e) {
      throw Error("cannot connect to " + url + ": " + e.what());
    }
    impl.open = true;
    impl.do_read();
    impl.thread = std::thread([impl = _impl] { impl->ioc.run(); });
  }

  WsClient::~WsClient()
  {
    close();
    if (_impl->thread.joinable()) {
      if (_impl->thread.get_id() == std::this_thread::get_id())
        _impl->thread.detach();
      else
        _impl->thread.join();
    }
  }

  void WsClient::send(std::string text)
  {
    asio::post(_impl->ioc, [impl = _impl, text = std::move(text)]() mutable {
      {
        std::lock_guard lock(impl->mutex);
        if (!impl->open)
          return;
      }
      impl->outbox.push_back(std::move(text));
      if (impl->outbox.size() == 1)
        impl->do_write();
    });
  }

  void WsClient::close()
  {
    {
      std::lock_guard lock(_impl->mutex);
      if (!_impl->open)
        return;
      _impl->open = false;
      _impl->on_close = nullptr;
      _impl->cv.notify_all();
    }
    asio::post(_impl->ioc, [impl = _impl] {
      beast::error_code ignored;
      impl->ws.next_layer().shutdown(tcp::socket::shutdown_both, ignored);
      impl->ws.next_layer().close(ignored);
    });
  }

  bool WsClient::is_open() const
  {
    std::lock_guard lock(_impl->mutex);
    return _impl->open;
  }

  std::optional<std::string> WsClient::receive(std::chrono::milliseconds timeout)
  {
    std::unique_lock lock(_impl->mutex);
    _impl->cv.wait_for(lock, timeout, [&] { return !_impl->inbox.empty() || !_impl->open; });
    if (_impl->inbox.empty())
      return std::nullopt;
    auto text = std::move(_impl->inbox.front());
    _impl->inbox.pop_front();
    return text;
  }

  WsChannel::WsChannel(std::string url, std::string token)
    : _url(std::move(url)), _token(std::move(token)), _receiver(std::make_shared<Receiver>())
  {
    open();
  }

  WsChannel::~WsChannel()
  {
    std::unique_ptr<WsClient> client;
    {
      std::lock_guard lock(_mutex);
      client = std::move(_client);
    }
  }

  void WsChannel::open()
  {
    std::weak_ptr<Receiver> weak = _receiver;
    auto client = std::make_unique<WsClient>(_url, _token, [this, weak](std::string frame) {
      Receiver receiver;
      {
        std::lock_guard lock(_mutex);
        if (auto r = weak.lock())
          receiver = *r;
      }
      if (receiver)
        receiver(std::move(frame));
    });
    std::unique_ptr<WsClient> old;
    {
      std::lock_guard lock(_mutex);
      old = std::move(_client);
      _client = std::move(client);
    }
  }

  void WsChannel::set_receiver(Receiver receiver)
  {
    std::lock_guard lock(_mutex);
    *_receiver = std::move(receiver);
  }

  void WsChannel::send(std::string frame)
  {
    std::lock_guard lock(_mutex);
    if (_client)
      _client->send(std::move(frame));
  }

  bool WsChannel::connected() const
  {
    std::lock_guard lock(_mutex);
    return _client && _client->is_open();
  }

  bool WsChannel::reconnect()
  {
    try {
      open();
      return true;
    } catch (const Error&) {
      return false;
    }
  }

  HttpResult http_request(const std::string& base_url, const std::string& method, const std::string& target,
                          const std::string& body, const std::string& token)
  {
    auto ep = parse_url(base_url);
    asio::io_context ioc;
    beast::tcp_stream stream(ioc);
    try {
      tcp::resolver resolver(ioc);
      stream.expires_after(std::chrono::seconds(30));
      stream.connect(resolver.resolve(ep.host, std::to_string(ep.port)));
      http::request<http::string_body> req{http::string_to_verb(method), target, 11};
      req.set(http::field::host, ep.host);
      if (!token.empty())
        req.set(http::field::authorization, "Bearer " + token);
      if (!body.empty()) {
        req.set(http::field::content_type, "application/json");
        req.body() = body;
      }
      req.prepare_payload();
      http::write(stream, req);
      beast::flat_buffer buffer;
      http::response<http::string_body> res;
      http::read(stream, buffer, res);
      beast::error_code ignored;
      stream.socket().shutdown(tcp::socket::shutdown_both, ignored);
      return {static_cast<int>(res.result_int()), res.body()};
    } catch (const boost::system::system_error& e) {
      throw Error("http " + method + " " + base_url + target + ": " + e.what());
    }
  }

} // namespace cloudroid
