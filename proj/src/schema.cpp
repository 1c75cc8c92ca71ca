#include <cloudroid/errors.hpp>
#include <cloudroid/schema.hpp>

#include <array>
#include <bit>
#include <cstring>

namespace cloudroid {

  namespace {

    constexpr std::array<std::pair<SchemaRef, std::string_view>, 5> schema_names{{
      {SchemaRef::blob, "blob"},
      {SchemaRef::image_rgb, "image_rgb"},
      {SchemaRef::grid_map, "grid_map"},
      {SchemaRef::pose, "pose"},
      {SchemaRef::detections, "detections"},
    }};

    class Writer {
    public:
      void u16(std::uint16_t v) { put_le(v); }
      void u32(std::uint32_t v) { put_le(v); }
      void f32(float v) { put_le(std::bit_cast<std::uint32_t>(v)); }
      void f64(double v) { put_le(std::bit_cast<std::uint64_t>(v)); }
      void raw(ByteView bytes) { _out.insert(_out.end(), bytes.begin(), bytes.end()); }
      void raw(std::string_view s) { _out.insert(_out.end(), s.begin(), s.end()); }
      Bytes take() { return std::move(_out); }

    private:
      template <typename T>
      void put_le(T v)
      {
        for (std::size_t i = 0; i < sizeof(T); ++i)
          _out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
      }

      Bytes _out;
    };

    class Reader {
    public:
      Reader(ByteView bytes, std::string_view schema) : _bytes(bytes), _schema(schema) {}

      std::uint16_t u16() { return get_le<std::uint16_t>(); }
      std::uint32_t u32() { return get_le<std::uint32_t>(); }
      float f32() { return std::bit_cast<float>(get_le<std::uint32_t>()); }
      double f64() { return std::bit_cast<double>(get_le<std::uint64_t>()); }

      ByteView raw(std::size_t n)
      {
        need(n);
        auto view = _bytes.subspan(_pos, n);
        _pos += n;
        return view;
      }

      void finish() const
      {
        if (_pos != _bytes.size())
          throw SchemaError(std::string(_schema) + ": trailing bytes");
      }

      std::size_t remaining() const { return _bytes.size() - _pos; }

    private:
      void need(std::size_t n) const
      {
        if (_bytes.size() - _pos < n)
          throw SchemaError(std::string(_schema) + ": truncated encoding");
      }

      template <typename T>
      T get_le()
      {
        need(sizeof(T));
        T v = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i)
          v |= static_cast<T>(static_cast<T>(_bytes[_pos + i]) << (8 * i));
        _pos += sizeof(T);
        return v;
      }

      ByteView _bytes;
      std::string_view _schema;
      std::size_t _pos = 0;
    };

    std::size_t checked_area(std::uint32_t w, std::uint32_t h, std::size_t depth, std::size_t available,
                             std::string_view schema)
    {
      const auto area = static_cast<unsigned __int128>(w) * h * depth;
      if (area != available)
        throw SchemaError(std::string(schema) + ": cell data does not match dimensions");
      return static_cast<std::size_t>(area);
    }

  } // namespace

  std::string_view to_string(SchemaRef schema)
  {
    for (const auto& [ref, name] : schema_names)
      if (ref == schema)
        return name;
    return "blob";
  }

  std::optional<SchemaRef> schema_from_string(std::string_view name)
  {
    for (const auto& [ref, n] : schema_names)
      if (n == name)
        return ref;
    return std::nullopt;
  }

  Bytes encode(const ImageRgb& image)
  {
    Writer w;
    w.u32(image.width);
    w.u32(image.height);
    w.raw(image.pixels);
    return w.take();
  }

  Bytes encode(const GridMap& grid)
  {
    Writer w;
    w.u32(grid.width);
    w.u32(grid.height);
    w.raw(grid.cells);
    return w.take();
  }

  Bytes encode(const Pose& pose)
  {
    Writer w;
    w.f64(pose.x);
    w.f64(pose.y);
    w.f64(pose.theta);
    return w.take();
  }

  Bytes encode(const Detections& detections)
  {
    Writer w;
    w.u32(static_cast<std::uint32_t>(detections.size()));
    for (const auto& d : detections) {
      w.u16(static_cast<std::uint16_t>(d.label.size()));
      w.raw(d.label);
      w.f32(d.x);
      w.f32(d.y);
      w.f32(d.w);
      w.f32(d.h);
      w.f32(d.score);
    }
    return w.take();
  }

  ImageRgb decode_image_rgb(ByteView bytes)
  {
    Reader r(bytes, "image_rgb");
    ImageRgb image;
    image.width = r.u32();
    image.height = r.u32();
    auto n = checked_area(image.width, image.height, 3, r.remaining(), "image_rgb");
    auto px = r.raw(n);
    image.pixels.assign(px.begin(), px.end());
    r.finish();
    return image;
  }

  GridMap decode_grid_map(ByteView bytes)
  {
    Reader r(bytes, "grid_map");
    GridMap grid;
    grid.width = r.u32();
    grid.height = r.u32();
    auto n = checked_area(grid.width, grid.height, 1, r.remaining(), "grid_map");
    auto cells = r.raw(n);
    grid.cells.assign(cells.begin(), cells.end());
    r.finish();
    return grid;
  }

  Pose decode_pose(ByteView bytes)
  {
    Reader r(bytes, "pose");
    Pose pose{r.f64(), r.f64(), r.f64()};
    r.finish();
    return pose;
  }

  Detections decode_detections(ByteView bytes)
  {
    Reader r(bytes, "detections");
    auto count = r.u32();
    // each item needs at least 22 bytes; reject absurd counts before reserving
    if (count > r.remaining() / 22)
      throw SchemaError("detections: count exceeds available bytes");
    Detections out;
    out.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
      Detection d;
      auto len = r.u16();
      auto label = r.raw(len);
      d.label.assign(label.begin(), label.end());
      d.x = r.f32();
      d.y = r.f32();
      d.w = r.f32();
      d.h = r.f32();
      d.score = r.f32();
      out.push_back(std::move(d));
    }
    r.finish();
    return out;
  }

  void validate_encoding(SchemaRef schema, ByteView bytes)
  {
    switch (schema) {
    case SchemaRef::blob:
      return;
    case SchemaRef::image_rgb:
      decode_image_rgb(bytes);
      return;
    case SchemaRef::grid_map:
      decode_grid_map(bytes);
      return;
    case SchemaRef::pose:
      decode_pose(bytes);
      return;
    case SchemaRef::detections:
      decode_detections(bytes);
      return;
    }
  }

} // namespace cloudroid
