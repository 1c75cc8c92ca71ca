#ifndef CLOUDROID_TRANSPORT_HPP
#define CLOUDROID_TRANSPORT_HPP

#include <cloudroid/portal.hpp>
#include <cloudroid/stub.hpp>

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace cloudroid {

  struct Endpoint {
    std::string scheme; // ws or http
    std::string host;
    std::uint16_t port = 0;
    std::string path;
  };

  // Accepts ws://host:port/path and http://host:port[/path]. Throws Error.
  Endpoint parse_url(std::string_view url);

  struct ServerConfig {
    std::string address = "127.0.0.1";
    std::uint16_t port = 8080; // 0 picks a free port
    std::string token;         // empty disables bearer-token checks
    int threads = 2;
  };

  // HTTP server exposing the management API and the /ws envelope stream on
  // one port. One WebSocket connection is one portal session.
  class PortalServer {
  public:
    PortalServer(ServicePortal& portal, ServerConfig config);
    ~PortalServer();

    PortalServer(const PortalServer&) = delete;
    PortalServer& operator=(const PortalServer&) = delete;

    // Binds and starts serving on background threads. Throws Error on bind failure.
    void start();
    void stop();

    std::uint16_t port() const { return _port; }

  private:
    struct Impl;
    std::unique_ptr<Impl> _impl;
    std::uint16_t _port = 0;
  };

  // WebSocket client carrying text frames. Inbound frames go to `on_message`
  // (on the client's I/O thread); `on_close` fires once when the link drops.
  class WsClient {
  public:
    using MessageHandler = std::function<void(std::string)>;
    using CloseHandler = std::function<void()>;

    // Connects and completes the handshake synchronously. Throws Error.
    WsClient(const std::string& url, const std::string& token, MessageHandler on_message = {},
             CloseHandler on_close = {});
    ~WsClient();

    WsClient(const WsClient&) = delete;
    WsClient& operator=(const WsClient&) = delete;

    // Queues a frame; silently dropped after the link closed.
    void send(std::string text);
    void close();
    bool is_open() const;

    // When constructed without a handler, frames queue up for receive().
    std::optional<std::string> receive(std::chrono::milliseconds timeout);

  private:
    struct Impl;
    std::shared_ptr<Impl> _impl;
  };

  // Stub channel over a WsClient; reconnect() opens a fresh connection.
  class WsChannel final : public RemoteChannel {
  public:
    // Connects immediately. Throws Error.
    WsChannel(std::string url, std::string token = {});
    ~WsChannel() override;

    void set_receiver(Receiver receiver) override;
    void send(std::string frame) override;
    bool connected() const override;
    bool reconnect() override;

  private:
    void open();

    std::string _url;
    std::string _token;
    mutable std::mutex _mutex;
    std::shared_ptr<Receiver> _receiver;
    std::unique_ptr<WsClient> _client;
  };

  // Minimal blocking HTTP client for the management API.
  struct HttpResult {
    int status = 0;
    std::string body;
  };
  HttpResult http_request(const std::string& base_url, const std::string& method, const std::string& target,
                          const std::string& body = {}, const std::string& token = {});

} // namespace cloudroid

#endif
