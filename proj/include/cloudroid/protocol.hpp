#ifndef CLOUDROID_PROTOCOL_HPP
#define CLOUDROID_PROTOCOL_HPP

#include <cloudroid/manifest.hpp>
#include <cloudroid/schema.hpp>

#include <optional>
#include <string>
#include <string_view>

namespace cloudroid::protocol {

  enum class Op { request_service, service_granted, publish, call, response, error, ping, pong };

  enum class Compression { none, deflate, zlib };

  std::string_view to_string(Op op);
  std::optional<Op> op_from_string(std::string_view s);
  std::string_view to_string(Compression c);
  std::optional<Compression> compression_from_string(std::string_view s);

  struct Payload {
    SchemaRef schema = SchemaRef::blob;
    Compression compression = Compression::none;
    std::string data; // base64 of the (possibly compressed) canonical encoding

    bool operator==(const Payload&) const = default;
  };

  struct SlaTimes {
    std::int64_t t_desire_ms = 0;
    std::int64_t t_max_ms = 0;

    bool operator==(const SlaTimes&) const = default;
  };

  struct SlaDeclaration {
    std::optional<SlaTimes> times;
    std::optional<ResourceQuota> resources;

    bool operator==(const SlaDeclaration&) const = default;
  };

  struct Status {
    std::string code;
    std::string detail;

    bool operator==(const Status&) const = default;
  };

  struct Envelope {
    Op op = Op::ping;
    std::string id;
    std::string target;
    std::optional<Payload> payload;
    std::optional<SlaDeclaration> sla;
    std::optional<Status> status;

    bool operator==(const Envelope&) const = default;
  };

  // Error codes carried in Status.code.
  namespace codes {
    inline constexpr std::string_view malformed = "malformed";
    inline constexpr std::string_view invariant = "invariant";
    inline constexpr std::string_view unknown_service = "unknown_service";
    inline constexpr std::string_view insufficient_resources = "insufficient_resources";
    inline constexpr std::string_view no_grant = "no_grant";
    inline constexpr std::string_view unknown_target = "unknown_target";
    inline constexpr std::string_view schema_error = "schema_error";
    inline constexpr std::string_view terminating = "terminating";
    inline constexpr std::string_view duplicate_id = "duplicate_id";
    inline constexpr std::string_view launch_failed = "launch_failed";
  } // namespace codes

  // Canonical JSON text: sorted keys, no whitespace. `op`, `id` and `target`
  // are always present; `payload`, `sla` and `status` only when set.
  std::string encode(const Envelope& e);

  // Throws ProtocolError("malformed") for text that is not JSON and
  // ProtocolError("invariant") when an envelope rule is broken.
  Envelope decode(std::string_view raw);

  // Envelope-level rules, shared by encode-side assertions and decode.
  void check_invariants(const Envelope& e);

  Envelope make_error(std::string id, std::string target, std::string_view code, std::string detail);

  // ---- payload codecs ----

  std::string base64_encode(ByteView bytes);
  // Strict: standard alphabet, padding required. Throws CodecError.
  Bytes base64_decode(std::string_view text);

  // Throws CodecError when the codec cannot be applied.
  Payload compress_payload(SchemaRef schema, ByteView bytes, Compression codec);
  // Throws CodecError for corrupt base64 or compressed streams.
  Bytes decompress_payload(const Payload& payload);

  // 1 - compressed_len / original_len; 0 for an empty original.
  double compression_ratio(std::size_t original_len, std::size_t compressed_len);

  // Codec assignment used for each schema on the wire.
  Compression default_codec(SchemaRef schema);

} // namespace cloudroid::protocol

#endif
