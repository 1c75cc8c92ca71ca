#include <cloudroid/errors.hpp>
#include <cloudroid/protocol.hpp>

#include <zlib.h>

#include <array>
#include <limits>

namespace cloudroid::protocol {

  namespace {

    constexpr std::string_view alphabet = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

    constexpr std::array<std::int8_t, 256> make_reverse()
    {
      std::array<std::int8_t, 256> table{};
      table.fill(-1);
      for (std::size_t i = 0; i < alphabet.size(); ++i)
        table[static_cast<unsigned char>(alphabet[i])] = static_cast<std::int8_t>(i);
      return table;
    }

    constexpr auto reverse_alphabet = make_reverse();

    // windowBits selects the framing: -15 raw deflate, 15 zlib header+adler32.
    int window_bits(Compression codec) { return codec == Compression::deflate ? -15 : 15; }

    Bytes deflate_bytes(ByteView in, Compression codec)
    {
      z_stream zs{};
      if (deflateInit2(&zs, Z_BEST_COMPRESSION, Z_DEFLATED, window_bits(codec), 8, Z_DEFAULT_STRATEGY) != Z_OK)
        throw CodecError("deflateInit2 failed");
      Bytes out(deflateBound(&zs, in.size()));
      zs.next_in = const_cast<Bytef*>(in.data());
      zs.avail_in = static_cast<uInt>(in.size());
      zs.next_out = out.data();
      zs.avail_out = static_cast<uInt>(out.size());
      int rc = deflate(&zs, Z_FINISH);
      out.resize(zs.total_out);
      deflateEnd(&zs);
      if (rc != Z_STREAM_END)
        throw CodecError("deflate did not finish");
      return out;
    }

    Bytes inflate_bytes(ByteView in, Compression codec)
    {
      z_stream zs{};
      if (inflateInit2(&zs, window_bits(codec)) != Z_OK)
        throw CodecError("inflateInit2 failed");
      zs.next_in = const_cast<Bytef*>(in.data());
      zs.avail_in = static_cast<uInt>(in.size());
      Bytes out;
      std::array<std::uint8_t, 16384> chunk{};
      int rc = Z_OK;
      while (rc != Z_STREAM_END) {
        zs.next_out = chunk.data();
        zs.avail_out = static_cast<uInt>(chunk.size());
        rc = inflate(&zs, Z_NO_FLUSH);
        if (rc != Z_OK && rc != Z_STREAM_END) {
          inflateEnd(&zs);
          throw CodecError(std::string("corrupt compressed stream: ") + (zs.msg ? zs.msg : "inflate error"));
        }
        out.insert(out.end(), chunk.data(), chunk.data() + (chunk.size() - zs.avail_out));
        if (rc == Z_OK && zs.avail_in == 0 && zs.avail_out != 0) {
          inflateEnd(&zs);
          throw CodecError("corrupt compressed stream: truncated");
        }
      }
      bool trailing = zs.avail_in != 0;
      inflateEnd(&zs);
      if (trailing)
        throw CodecError("corrupt compressed stream: trailing data");
      return out;
    }

  } // namespace

  std::string base64_encode(ByteView bytes)
  {
    std::string out;
    out.reserve((bytes.size() + 2) / 3 * 4);
    std::size_t i = 0;
    for (; i + 3 <= bytes.size(); i += 3) {
      std::uint32_t n = (bytes[i] << 16) | (bytes[i + 1] << 8) | bytes[i + 2];
      out += alphabet[(n >> 18) & 63];
      out += alphabet[(n >> 12) & 63];
      out += alphabet[(n >> 6) & 63];
      out += alphabet[n & 63];
    }
    if (auto rest = bytes.size() - i; rest > 0) {
      std::uint32_t n = bytes[i] << 16;
      if (rest == 2)
        n |= bytes[i + 1] << 8;
      out += alphabet[(n >> 18) & 63];
      out += alphabet[(n >> 12) & 63];
      out += rest == 2 ? alphabet[(n >> 6) & 63] : '=';
      out += '=';
    }
    return out;
  }

  Bytes base64_decode(std::string_view text)
  {
    if (text.size() % 4 != 0)
      throw CodecError("base64 length is not a multiple of 4");
    Bytes out;
    out.reserve(text.size() / 4 * 3);
    for (std::size_t i = 0; i < text.size(); i += 4) {
      bool last = i + 4 == text.size();
      std::array<int, 4> v{};
      int pad = 0;
      for (int k = 0; k < 4; ++k) {
        char c = text[i + k];
        if (c == '=') {
          if (!last || k < 2)
            throw CodecError("misplaced base64 padding");
          ++pad;
          v[k] = 0;
          continue;
        }
        if (pad > 0)
          throw CodecError("data after base64 padding");
        v[k] = reverse_alphabet[static_cast<unsigned char>(c)];
        if (v[k] < 0)
          throw CodecError("invalid base64 character");
      }
      std::uint32_t n = (v[0] << 18) | (v[1] << 12) | (v[2] << 6) | v[3];
      // non-canonical encodings leave stray bits under the padding
      if ((pad == 1 && (n & 0xff) != 0) || (pad == 2 && (n & 0xffff) != 0))
        throw CodecError("non-canonical base64 padding bits");
      out.push_back(static_cast<std::uint8_t>(n >> 16));
      if (pad < 2)
        out.push_back(static_cast<std::uint8_t>(n >> 8));
      if (pad < 1)
        out.push_back(static_cast<std::uint8_t>(n));
    }
    return out;
  }

  Payload compress_payload(SchemaRef schema, ByteView bytes, Compression codec)
  {
    if (bytes.size() > std::numeric_limits<uInt>::max())
      throw CodecError("payload too large for a single codec pass");
    Payload p;
    p.schema = schema;
    p.compression = codec;
    if (codec == Compression::none)
      p.data = base64_encode(bytes);
    else
      p.data = base64_encode(deflate_bytes(bytes, codec));
    return p;
  }

  Bytes decompress_payload(const Payload& payload)
  {
    auto raw = base64_decode(payload.data);
    if (payload.compression == Compression::none)
      return raw;
    return inflate_bytes(raw, payload.compression);
  }

  double compression_ratio(std::size_t original_len, std::size_t compressed_len)
  {
    if (original_len == 0)
      return 0.0;
    return 1.0 - static_cast<double>(compressed_len) / static_cast<double>(original_len);
  }

  Compression default_codec(SchemaRef schema)
  {
    switch (schema) {
    case SchemaRef::grid_map:
      return Compression::zlib;
    case SchemaRef::image_rgb:
      return Compression::deflate;
    default:
      return Compression::none;
    }
  }

} // namespace cloudroid::protocol
