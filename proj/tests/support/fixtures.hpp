#pragma once

#include <cloudroid/errors.hpp>
#include <cloudroid/portal.hpp>
#include <cloudroid/protocol.hpp>
#include <cloudroid/scheduler.hpp>
#include <cloudroid/stub.hpp>
#include <cloudroid/workload.hpp>

#include "oracles.hpp"

#include <cstdlib>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace fixture {

  using namespace cloudroid;

  inline std::string data(const std::string& name) { return oracle::read_file(std::string(CLOUDROID_TEST_DATA) + "/" + name); }

  // Compares against tests/data/golden/<name>; CLOUDROID_UPDATE_GOLDEN=1 rewrites it instead.
  inline bool matches_golden(const std::string& name, const std::string& actual)
  {
    auto path = std::string(CLOUDROID_TEST_DATA) + "/golden/" + name;
    if (std::getenv("CLOUDROID_UPDATE_GOLDEN")) {
      std::ofstream(path, std::ios::binary) << actual;
      return true;
    }
    return oracle::read_file(path) == actual;
  }

  inline PackageManifest detect_manifest() { return parse_manifest(data("detect.json")); }
  inline PackageManifest mapper_manifest() { return parse_manifest(data("mapper.json")); }

  inline std::unique_ptr<ServicePortal> make_portal(Scheduler& scheduler, bool deploy = true)
  {
    auto portal = std::make_unique<ServicePortal>(SlaDictionary::parse(data("dictionary.json")),
                                                  NodePool::parse(data("nodes.json")), scheduler,
                                                  "ws://127.0.0.1:9/ws");
    if (deploy) {
      portal->deploy_package(data("detect.json"));
      portal->deploy_package(data("mapper.json"));
    }
    return portal;
  }

  // Records every envelope a portal session emits.
  struct Inbox {
    std::vector<protocol::Envelope> frames;
    EnvelopeSink sink()
    {
      return [this](const protocol::Envelope& e) { frames.push_back(e); };
    }
  };

  inline protocol::Envelope request_service(const std::string& id, const std::string& service, std::int64_t t_desire = 100,
                                            std::int64_t t_max = 300)
  {
    protocol::Envelope e;
    e.op = protocol::Op::request_service;
    e.id = id;
    e.target = service;
    e.sla = protocol::SlaDeclaration{protocol::SlaTimes{t_desire, t_max}, std::nullopt};
    return e;
  }

  inline protocol::Envelope call(const std::string& id, const std::string& target, SchemaRef schema, const Bytes& bytes,
                                 protocol::Compression codec = protocol::Compression::none)
  {
    protocol::Envelope e;
    e.op = protocol::Op::call;
    e.id = id;
    e.target = target;
    e.payload = protocol::compress_payload(schema, bytes, codec);
    return e;
  }

  inline Bytes small_image(std::uint32_t w = 8, std::uint32_t h = 6, std::uint8_t seed = 1)
  {
    ImageRgb img{w, h, Bytes(std::size_t{w} * h * 3)};
    for (std::size_t i = 0; i < img.pixels.size(); ++i)
      img.pixels[i] = static_cast<std::uint8_t>(i * 7 + seed);
    return encode(img);
  }

  // Portal stand-in for stub tests: grants immediately, answers pings, and
  // answers each call after a scripted delay using the real workload engine.
  class ScriptedRemote final : public RemoteChannel, public std::enable_shared_from_this<ScriptedRemote> {
  public:
    using DelayFn = std::function<std::optional<double>(std::uint64_t call_index)>;

    ScriptedRemote(Scheduler& scheduler, PackageManifest manifest, ResourceQuota quota)
      : _scheduler(scheduler), _engine(std::move(manifest), quota)
    {
    }

    DelayFn call_delay = [](std::uint64_t) { return std::optional<double>(10.0); };
    bool down = false;
    bool refuse_grant = false;
    double link_delay = 1;
    std::optional<std::string> error_code; // answer calls with this error instead
    std::vector<protocol::Envelope> received;
    std::uint64_t grants = 0;

    void set_receiver(Receiver r) override { _receiver = std::move(r); }

    void send(std::string frame) override
    {
      if (down)
        return;
      auto e = protocol::decode(frame);
      received.push_back(e);
      switch (e.op) {
      case protocol::Op::ping: {
        protocol::Envelope pong;
        pong.op = protocol::Op::pong;
        pong.id = e.id;
        reply(pong, link_delay);
        break;
      }
      case protocol::Op::request_service: {
        if (refuse_grant) {
          reply(protocol::make_error(e.id, e.target, protocol::codes::insufficient_resources, "full"), link_delay);
          break;
        }
        ++grants;
        protocol::Envelope g;
        g.op = protocol::Op::service_granted;
        g.id = e.id;
        g.target = e.target;
        std::string servant = "remote-" + std::to_string(grants);
        g.payload = protocol::compress_payload(SchemaRef::blob, Bytes(servant.begin(), servant.end()),
                                               protocol::Compression::none);
        reply(g, link_delay);
        break;
      }
      case protocol::Op::call: {
        auto delay = call_delay(_calls++);
        if (error_code) {
          if (delay)
            reply(protocol::make_error(e.id, e.target, *error_code, "scripted"), *delay);
          break;
        }
        auto outcome = _engine.process(e);
        if (!delay)
          break;
        for (const auto& r : outcome.replies)
          reply(r, *delay);
        break;
      }
      case protocol::Op::publish:
        for (const auto& r : _engine.process(e).replies)
          reply(r, link_delay);
        break;
      default:
        break;
      }
    }

    std::uint64_t calls() const { return _calls; }
    const WorkloadEngine& engine() const { return _engine; }

  private:
    void reply(const protocol::Envelope& e, double delay)
    {
      std::weak_ptr<ScriptedRemote> weak = weak_from_this();
      _scheduler.after(delay, [weak, text = protocol::encode(e)] {
        auto self = weak.lock();
        if (self && !self->down && self->_receiver)
          self->_receiver(text);
      });
    }

    Scheduler& _scheduler;
    WorkloadEngine _engine;
    Receiver _receiver;
    std::uint64_t _calls = 0;
  };

} // namespace fixture
