#include <cloudroid/errors.hpp>
#include <cloudroid/workload.hpp>

#include <array>
#include <numbers>

namespace cloudroid {

  namespace {

    std::uint64_t splitmix64(std::uint64_t& state)
    {
      std::uint64_t z = (state += 0x9e3779b97f4a7c15ull);
      z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
      z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
      return z ^ (z >> 31);
    }

    float unit(std::uint64_t& state) { return static_cast<float>(splitmix64(state) >> 40) / static_cast<float>(1ull << 24); }

    constexpr std::array<const char*, 8> labels{"person", "chair", "table", "door", "robot", "cup", "bottle", "plant"};

  } // namespace

  WorkloadModel WorkloadModel::from(const WorkloadSpec& spec)
  {
    return {numeric_param(spec.params, "base_work_ms", 0), numeric_param(spec.params, "per_kb_work_ms", 0),
            numeric_param(spec.params, "state_growth_ms", 0)};
  }

  double service_time_ms(const WorkloadModel& model, std::size_t payload_bytes, std::int64_t cpu_millicores,
                         std::uint64_t frames_stored)
  {
    const double kb = static_cast<double>(payload_bytes) / 1024.0;
    const double scale = 1000.0 / static_cast<double>(std::max<std::int64_t>(cpu_millicores, 1));
    return (model.base_work_ms + model.per_kb_work_ms * kb) * scale +
           model.state_growth_ms * static_cast<double>(frames_stored);
  }

  std::uint64_t fnv1a(ByteView bytes, std::uint64_t state)
  {
    for (auto b : bytes) {
      state ^= b;
      state *= 1099511628211ull;
    }
    return state;
  }

  Bytes synthesize(SchemaRef schema, std::uint64_t seed, std::uint64_t frame_count)
  {
    std::uint64_t rng = seed;
    switch (schema) {
    case SchemaRef::blob: {
      Bytes out(16);
      for (int i = 0; i < 8; ++i) {
        out[i] = static_cast<std::uint8_t>(frame_count >> (8 * i));
        out[8 + i] = static_cast<std::uint8_t>(seed >> (8 * i));
      }
      return out;
    }
    case SchemaRef::detections: {
      Detections out;
      auto n = 1 + seed % 3;
      for (std::uint64_t i = 0; i < n; ++i) {
        Detection d;
        d.label = labels[splitmix64(rng) % labels.size()];
        d.x = unit(rng);
        d.y = unit(rng);
        d.w = unit(rng) * (1.0f - d.x);
        d.h = unit(rng) * (1.0f - d.y);
        d.score = 0.5f + 0.5f * unit(rng);
        out.push_back(std::move(d));
      }
      return encode(out);
    }
    case SchemaRef::pose: {
      Pose p;
      p.x = static_cast<double>(frame_count);
      p.y = static_cast<double>(seed & 0xffff) / 65536.0;
      p.theta = static_cast<double>((seed >> 16) & 0xffff) / 65536.0 * 2 * std::numbers::pi - std::numbers::pi;
      return encode(p);
    }
    case SchemaRef::image_rgb: {
      ImageRgb img{8, 8, Bytes(8 * 8 * 3)};
      for (auto& px : img.pixels)
        px = static_cast<std::uint8_t>(splitmix64(rng));
      return encode(img);
    }
    case SchemaRef::grid_map: {
      // mostly unknown space with a few occupied cells, like a sparse map
      GridMap grid{64, 64, Bytes(64 * 64, 0)};
      auto marks = 4 + frame_count % 16;
      for (std::uint64_t i = 0; i < marks; ++i)
        grid.cells[splitmix64(rng) % grid.cells.size()] = 100;
      return encode(grid);
    }
    }
    return {};
  }

  WorkloadEngine::WorkloadEngine(PackageManifest manifest, ResourceQuota quota)
      : _manifest(std::move(manifest)), _quota(quota), _model(WorkloadModel::from(_manifest.workload)),
        _stateful(_manifest.stateful)
  {}

  protocol::Envelope WorkloadEngine::respond(const protocol::Envelope& in, SchemaRef schema, std::uint64_t seed) const
  {
    protocol::Envelope out;
    out.op = protocol::Op::response;
    out.id = in.id;
    out.target = in.target;
    auto bytes = synthesize(schema, seed, _frames);
    out.payload = protocol::compress_payload(schema, bytes, protocol::default_codec(schema));
    return out;
  }

  WorkloadEngine::Outcome WorkloadEngine::process(const protocol::Envelope& in)
  {
    using protocol::Op;
    Outcome outcome;

    const bool is_call = in.op == Op::call;
    if (!is_call && in.op != Op::publish) {
      outcome.replies.push_back(
        protocol::make_error(in.id, in.target, protocol::codes::invariant, "servants accept only call and publish"));
      return outcome;
    }

    SchemaRef expected = SchemaRef::blob;
    const auto* rpc = _manifest.interface.find_rpc(in.target);
    const auto* topic = _manifest.interface.find_topic(in.target);
    if (is_call && rpc)
      expected = rpc->request_schema;
    else if (!is_call && topic && topic->direction == Direction::inbound)
      expected = topic->schema;
    else {
      outcome.replies.push_back(protocol::make_error(
        in.id, in.target, protocol::codes::unknown_target,
        std::string(is_call ? "no rpc named '" : "no inbound topic named '") + in.target + "'"));
      return outcome;
    }

    Bytes frame;
    try {
      if (!in.payload)
        throw SchemaError("missing payload");
      if (in.payload->schema != expected)
        throw SchemaError(std::string("expected schema ") + std::string(to_string(expected)) + ", got " +
                          std::string(to_string(in.payload->schema)));
      frame = protocol::decompress_payload(*in.payload);
      validate_encoding(expected, frame);
    } catch (const Error& e) {
      outcome.replies.push_back(protocol::make_error(in.id, in.target, protocol::codes::schema_error, e.what()));
      return outcome;
    }

    outcome.service_ms = service_time_ms(_model, frame.size(), _quota.cpu_millicores, _stateful ? _frames : 0);

    std::uint64_t seed = 0;
    if (_stateful) {
      _checksum = fnv1a(frame, _checksum);
      ++_frames;
      seed = _checksum;
    } else {
      seed = fnv1a(frame);
    }

    if (is_call) {
      outcome.replies.push_back(respond(in, rpc->response_schema, seed));
    } else {
      for (const auto& out_topic : _manifest.interface.topics) {
        if (out_topic.direction != Direction::outbound)
          continue;
        protocol::Envelope pub;
        pub.op = Op::publish;
        pub.target = out_topic.name;
        pub.payload = protocol::compress_payload(out_topic.schema, synthesize(out_topic.schema, seed, _frames),
                                                 protocol::default_codec(out_topic.schema));
        outcome.replies.push_back(std::move(pub));
        break;
      }
    }
    return outcome;
  }

} // namespace cloudroid
