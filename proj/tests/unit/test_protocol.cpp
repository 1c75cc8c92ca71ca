#include <doctest.h>

#include <cloudroid/errors.hpp>
#include <cloudroid/protocol.hpp>

#include <nlohmann/json.hpp>

#include <random>

using namespace cloudroid;
using namespace cloudroid::protocol;
using nlohmann::json;

namespace {

  std::string decode_code(const std::string& raw)
  {
    try {
      decode(raw);
    } catch (const ProtocolError& e) {
      return e.code;
    }
    return "ok";
  }

} // namespace

TEST_CASE("ping encodes with empty id and target")
{
  Envelope ping;
  ping.op = Op::ping;
  CHECK(encode(ping) == R"({"id":"","op":"ping","target":""})");
}

TEST_CASE("call encoding is canonical: sorted keys, no whitespace")
{
  Envelope e;
  e.op = Op::call;
  e.id = "c1";
  e.target = "detect";
  e.payload = Payload{SchemaRef::blob, Compression::none, "AQID"};
  CHECK(encode(e) == R"({"id":"c1","op":"call","payload":{"compression":"none","data":"AQID","schema":"blob"},"target":"detect"})");
}

TEST_CASE("request_service carries times or resources")
{
  Envelope e;
  e.op = Op::request_service;
  e.id = "g";
  e.target = "detect";
  e.sla = SlaDeclaration{SlaTimes{100, 300}, std::nullopt};
  CHECK(encode(e) == R"({"id":"g","op":"request_service","sla":{"times":{"t_desire_ms":100,"t_max_ms":300}},"target":"detect"})");
  CHECK(decode(encode(e)) == e);

  e.sla = SlaDeclaration{std::nullopt, ResourceQuota{2000, 512}};
  CHECK(encode(e) ==
        R"({"id":"g","op":"request_service","sla":{"resources":{"cpu_millicores":2000,"memory_mb":512}},"target":"detect"})");
  CHECK(decode(encode(e)) == e);
}

TEST_CASE("decode tolerates missing id and target")
{
  auto e = decode(R"({"op":"pong"})");
  CHECK(e.op == Op::pong);
  CHECK(e.id.empty());
  CHECK(e.target.empty());
}

TEST_CASE("decode rejects malformed text")
{
  CHECK(decode_code("{not json") == "malformed");
  CHECK(decode_code("[1,2]") == "malformed");
  CHECK(decode_code("\"ping\"") == "malformed");
  CHECK(decode_code("") == "malformed");
  CHECK(decode_code("{\"op\":\"ping\",\"id\":\"\xC3\"}") == "malformed");
}

TEST_CASE("decode enforces envelope invariants")
{
  CHECK(decode_code(R"({"op":"teleport"})") == "invariant");
  CHECK(decode_code(R"({"id":"x"})") == "invariant");
  CHECK(decode_code(R"({"op":"ping","extra":1})") == "invariant");
  CHECK(decode_code(R"({"op":"call","id":"1","target":"detect"})") == "invariant");
  CHECK(decode_code(R"({"op":"call","id":"","target":"detect","payload":{"schema":"blob","compression":"none","data":""}})") ==
        "invariant");
  CHECK(decode_code(R"({"op":"call","id":"1","payload":{"schema":"blob","compression":"none","data":""}})") == "invariant");
  CHECK(decode_code(R"({"op":"response"})") == "invariant");
  CHECK(decode_code(R"({"op":"publish","target":"scan"})") == "invariant");
  CHECK(decode_code(R"({"op":"error","id":"1"})") == "invariant");
  CHECK(decode_code(R"({"op":"request_service","target":"detect"})") == "invariant");
  CHECK(decode_code(R"({"op":"request_service","target":"detect","sla":{}})") == "invariant");
  CHECK(decode_code(
          R"({"op":"request_service","target":"detect","sla":{"times":{"t_desire_ms":1,"t_max_ms":2},"resources":{"cpu_millicores":1000,"memory_mb":256}}})") ==
        "invariant");
  CHECK(decode_code(R"({"op":"request_service","target":"detect","sla":{"times":{"t_desire_ms":300,"t_max_ms":100}}})") ==
        "invariant");
  CHECK(decode_code(R"({"op":"request_service","target":"detect","sla":{"times":{"t_desire_ms":0,"t_max_ms":100}}})") ==
        "invariant");
  CHECK(decode_code(R"({"op":"request_service","target":"detect","sla":{"times":{"t_desire_ms":1.5,"t_max_ms":100}}})") ==
        "invariant");
  CHECK(decode_code(R"({"op":"request_service","target":"detect","sla":{"resources":{"cpu_millicores":1,"memory_mb":256}}})") ==
        "invariant");
  CHECK(decode_code(R"({"op":"ping","sla":{"times":{"t_desire_ms":1,"t_max_ms":2}}})") == "invariant");
  CHECK(decode_code(R"({"op":"ping","status":{"code":"x","detail":""}})") == "invariant");
  CHECK(decode_code(R"({"op":"call","id":"1","target":"t","payload":{"schema":"lidar","compression":"none","data":""}})") ==
        "invariant");
  CHECK(decode_code(R"({"op":"call","id":"1","target":"t","payload":{"schema":"blob","compression":"lz4","data":""}})") ==
        "invariant");
  CHECK(decode_code(R"({"op":"ping","id":7})") == "invariant");
}

TEST_CASE("make_error builds a valid error envelope")
{
  auto e = make_error("7", "detect", codes::no_grant, "no grant for detect");
  CHECK_NOTHROW(check_invariants(e));
  CHECK(encode(e) == R"({"id":"7","op":"error","status":{"code":"no_grant","detail":"no grant for detect"},"target":"detect"})");
  CHECK(decode(encode(e)) == e);
}

TEST_CASE("random valid envelopes round-trip through the wire format")
{
  std::mt19937 rng(11);
  auto word = [&] {
    std::string s(1 + rng() % 8, 'a');
    for (auto& c : s)
      c = static_cast<char>('a' + rng() % 26);
    return s;
  };
  for (int i = 0; i < 500; ++i) {
    Envelope e;
    e.id = word();
    e.target = word();
    switch (rng() % 6) {
    case 0:
      e.op = Op::ping;
      break;
    case 1:
      e.op = Op::call;
      e.payload = Payload{SchemaRef::image_rgb, Compression::deflate, "AAAA"};
      break;
    case 2:
      e.op = Op::response;
      e.payload = Payload{SchemaRef::detections, Compression::none, ""};
      break;
    case 3:
      e.op = Op::publish;
      e.payload = Payload{SchemaRef::grid_map, Compression::zlib, "eJw="};
      break;
    case 4:
      e.op = Op::error;
      e.status = Status{word(), word()};
      break;
    default: {
      e.op = Op::request_service;
      std::int64_t a = 1 + rng() % 500, b = a + rng() % 500;
      e.sla = SlaDeclaration{SlaTimes{a, b}, std::nullopt};
      break;
    }
    }
    auto wire = encode(e);
    CHECK(decode(wire) == e);
    CHECK(encode(decode(wire)) == wire);
  }
}
