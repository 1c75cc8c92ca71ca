#include <doctest.h>

#include "support/fixtures.hpp"

#include <cloudroid/manifest.hpp>
#include <cloudroid/stubgen.hpp>

#include <nlohmann/json.hpp>

#include <set>

using namespace cloudroid;
using protocol::Compression;

namespace {

  const std::string url = "ws://portal.local:8080/ws";

  std::set<std::string> names(const InterfaceSpec& i)
  {
    std::set<std::string> out;
    for (const auto& t : i.topics)
      out.insert("topic:" + t.name + ":" + std::string(to_string(t.schema)));
    for (const auto& r : i.rpcs)
      out.insert("rpc:" + r.name + ":" + std::string(to_string(r.request_schema)) + ":" +
                 std::string(to_string(r.response_schema)));
    return out;
  }

} // namespace

TEST_CASE("detector descriptor")
{
  auto m = fixture::detect_manifest();
  auto d = generate_stub(m, url);
  CHECK(d.service == "detect");
  CHECK_FALSE(d.stateful);
  CHECK(d.portal_url == url);
  CHECK(d.compression_policy == std::map<SchemaRef, Compression>{{SchemaRef::image_rgb, Compression::deflate}});
  CHECK(d.codec_for(SchemaRef::image_rgb) == Compression::deflate);
  CHECK(d.codec_for(SchemaRef::detections) == Compression::none);
  REQUIRE(d.local_fallback);
  CHECK(*d.local_fallback == m.workload);
  CHECK(d.defaults == StubDefaults{std::nullopt, std::nullopt, 10});
  CHECK(fixture::matches_golden("detect.descriptor.json", serialize_descriptor(d)));
}

TEST_CASE("mapper descriptor is stateful and compresses maps with zlib")
{
  auto d = generate_stub(fixture::mapper_manifest(), url);
  CHECK(d.stateful);
  CHECK(d.codec_for(SchemaRef::grid_map) == Compression::zlib);
  CHECK(d.codec_for(SchemaRef::blob) == Compression::none);
}

TEST_CASE("interface is copied verbatim")
{
  for (auto m : {fixture::detect_manifest(), fixture::mapper_manifest()}) {
    auto d = generate_stub(m, url);
    CHECK(d.interface == m.interface);
    CHECK(names(d.interface) == names(m.interface));
    auto descriptor_iface = nlohmann::json::parse(serialize_descriptor(d))["interface"].dump();
    auto manifest_iface = nlohmann::json::parse(serialize_manifest(m))["interface"].dump();
    CHECK(descriptor_iface == manifest_iface);
  }
}

TEST_CASE("generation is deterministic and the descriptor round-trips")
{
  auto m = fixture::mapper_manifest();
  auto a = serialize_descriptor(generate_stub(m, url));
  CHECK(a == serialize_descriptor(generate_stub(m, url)));
  auto parsed = parse_descriptor(a);
  CHECK(parsed == generate_stub(m, url));
  CHECK(serialize_descriptor(parsed) == a);
  CHECK(a != serialize_descriptor(generate_stub(m, "ws://elsewhere/ws")));
}

TEST_CASE("descriptor parse errors")
{
  CHECK_THROWS_AS(parse_descriptor("{"), SyntaxError);
  CHECK_THROWS_AS(parse_descriptor("[]"), ValidationError);
  auto j = nlohmann::json::parse(serialize_descriptor(generate_stub(fixture::detect_manifest(), url)));
  auto bad = j;
  bad["compression_policy"]["image_rgb"] = "lz4";
  CHECK_THROWS_AS(parse_descriptor(bad.dump()), ValidationError);
  bad = j;
  bad["defaults"]["t_max_ms"] = -3;
  CHECK_THROWS_AS(parse_descriptor(bad.dump()), ValidationError);
  bad = j;
  bad.erase("interface");
  CHECK_THROWS_AS(parse_descriptor(bad.dump()), ValidationError);
  bad = j;
  bad["defaults"] = {{"t_desire_ms", 100}, {"t_max_ms", 300}};
  auto d = parse_descriptor(bad.dump());
  CHECK(d.defaults == StubDefaults{100, 300, 10});
}

TEST_CASE("local manifest runs the fallback workload")
{
  auto d = generate_stub(fixture::detect_manifest(), url);
  auto lm = local_manifest(d);
  CHECK(lm.name == "detect");
  CHECK(lm.interface == d.interface);
  CHECK(lm.workload == *d.local_fallback);
  d.local_fallback.reset();
  CHECK_THROWS_AS(local_manifest(d), LocalLaunchError);
}
