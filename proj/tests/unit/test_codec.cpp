#include <doctest.h>

#include <cloudroid/errors.hpp>
#include <cloudroid/protocol.hpp>
#include <cloudroid/schema.hpp>

#include <zlib.h>

#include <cmath>
#include <random>

using namespace cloudroid;
using namespace cloudroid::protocol;

namespace {

  // Straight zlib inflate, independent of the library's codec.
  Bytes oracle_inflate(const Bytes& in, int window_bits)
  {
    z_stream zs{};
    REQUIRE(inflateInit2(&zs, window_bits) == Z_OK);
    Bytes out(1 << 20);
    zs.next_in = const_cast<Bytef*>(in.data());
    zs.avail_in = static_cast<uInt>(in.size());
    zs.next_out = out.data();
    zs.avail_out = static_cast<uInt>(out.size());
    int rc = inflate(&zs, Z_FINISH);
    out.resize(zs.total_out);
    inflateEnd(&zs);
    REQUIRE(rc == Z_STREAM_END);
    return out;
  }

  Bytes smooth_gradient_image()
  {
    ImageRgb img{64, 64, {}};
    for (std::uint32_t y = 0; y < 64; ++y)
      for (std::uint32_t x = 0; x < 64; ++x) {
        img.pixels.push_back(static_cast<std::uint8_t>(x * 4));
        img.pixels.push_back(static_cast<std::uint8_t>(y * 4));
        img.pixels.push_back(static_cast<std::uint8_t>((x + y) * 2));
      }
    return encode(img);
  }

  double ratio_of(const Payload& p, std::size_t original)
  {
    return compression_ratio(original, base64_decode(p.data).size());
  }

  Bytes str_bytes(std::string_view s) { return Bytes(s.begin(), s.end()); }

} // namespace

TEST_CASE("base64 matches the standard test vectors")
{
  CHECK(base64_encode(str_bytes("")) == "");
  CHECK(base64_encode(str_bytes("f")) == "Zg==");
  CHECK(base64_encode(str_bytes("fo")) == "Zm8=");
  CHECK(base64_encode(str_bytes("foo")) == "Zm9v");
  CHECK(base64_encode(str_bytes("foob")) == "Zm9vYg==");
  CHECK(base64_encode(str_bytes("fooba")) == "Zm9vYmE=");
  CHECK(base64_encode(str_bytes("foobar")) == "Zm9vYmFy");
  CHECK(base64_decode("Zm9vYmE=") == str_bytes("fooba"));
}

TEST_CASE("corrupted base64 is a codec error")
{
  CHECK_THROWS_AS(base64_decode("Zm9"), CodecError);
  CHECK_THROWS_AS(base64_decode("Zm9*"), CodecError);
  CHECK_THROWS_AS(base64_decode("Z===="), CodecError);
  CHECK_THROWS_AS(base64_decode("Zh=="), CodecError);
  CHECK_THROWS_AS(base64_decode("Zg==Zg=="), CodecError);
}

TEST_CASE("corrupted compressed streams are codec errors")
{
  auto p = compress_payload(SchemaRef::blob, Bytes(1000, 3), Compression::zlib);
  auto raw = base64_decode(p.data);
  raw.resize(raw.size() / 2);
  p.data = base64_encode(raw);
  CHECK_THROWS_AS(decompress_payload(p), CodecError);

  Payload junk{SchemaRef::blob, Compression::deflate, base64_encode(Bytes{0xff, 0xff, 0xff, 0xff})};
  CHECK_THROWS_AS(decompress_payload(junk), CodecError);
}

TEST_CASE("compression=none is the identity")
{
  auto p = compress_payload(SchemaRef::blob, Bytes{}, Compression::none);
  CHECK(p.data.empty());
  CHECK(p.compression == Compression::none);
  CHECK(decompress_payload(p).empty());
  Bytes b{0, 1, 2, 250};
  CHECK(decompress_payload(compress_payload(SchemaRef::blob, b, Compression::none)) == b);
}

TEST_CASE("tags select the stream framing")
{
  Bytes b(500, 42);
  auto z = base64_decode(compress_payload(SchemaRef::blob, b, Compression::zlib).data);
  auto d = base64_decode(compress_payload(SchemaRef::blob, b, Compression::deflate).data);
  CHECK(z[0] == 0x78);
  CHECK(oracle_inflate(z, 15) == b);
  CHECK(oracle_inflate(d, -15) == b);
  // raw deflate has neither the 2-byte header nor the 4-byte adler32 trailer
  CHECK(z.size() == d.size() + 6);
}

TEST_CASE("all-zero grid map compresses past 99% under zlib")
{
  auto grid = encode(GridMap{256, 256, Bytes(256 * 256, 0)});
  auto p = compress_payload(SchemaRef::grid_map, grid, Compression::zlib);
  CHECK(ratio_of(p, grid.size()) >= 0.99);
  CHECK(decode_grid_map(decompress_payload(p)) == GridMap{256, 256, Bytes(256 * 256, 0)});

  auto big = encode(GridMap{512, 512, Bytes(512 * 512, 0)});
  CHECK(ratio_of(compress_payload(SchemaRef::grid_map, big, Compression::zlib), big.size()) >= 0.99);
}

TEST_CASE("smooth gradient image deflate ratio regression")
{
  auto img = smooth_gradient_image();
  auto p = compress_payload(SchemaRef::image_rgb, img, Compression::deflate);
  CHECK(std::abs(ratio_of(p, img.size()) - 0.166) <= 0.02);
  CHECK(decompress_payload(p) == img);
}

TEST_CASE("default codecs follow the data category")
{
  CHECK(default_codec(SchemaRef::grid_map) == Compression::zlib);
  CHECK(default_codec(SchemaRef::image_rgb) == Compression::deflate);
  CHECK(default_codec(SchemaRef::pose) == Compression::none);
  CHECK(compression_ratio(0, 0) == 0.0);
  CHECK(compression_ratio(100, 25) == doctest::Approx(0.75));
}

TEST_CASE("random payloads round-trip under every codec")
{
  std::mt19937 rng(3);
  for (int i = 0; i < 1000; ++i) {
    Bytes b(rng() % 4096);
    int mode = rng() % 3;
    for (auto& x : b)
      x = static_cast<std::uint8_t>(mode == 0 ? rng() : rng() % 4);
    for (auto c : {Compression::none, Compression::deflate, Compression::zlib})
      CHECK(decompress_payload(compress_payload(SchemaRef::blob, b, c)) == b);
  }
}
