#ifndef CLOUDROID_SCHEMA_HPP
#define CLOUDROID_SCHEMA_HPP

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace cloudroid {

  using Bytes = std::vector<std::uint8_t>;
  using ByteView = std::span<const std::uint8_t>;

  // The closed registry of message schemas a package interface may reference.
  enum class SchemaRef { blob, image_rgb, grid_map, pose, detections };

  std::string_view to_string(SchemaRef schema);
  std::optional<SchemaRef> schema_from_string(std::string_view name);

  struct ImageRgb {
    std::uint32_t width = 0;
    std::uint32_t height = 0;
    Bytes pixels; // width * height * 3, row-major RGB

    bool operator==(const ImageRgb&) const = default;
  };

  struct GridMap {
    std::uint32_t width = 0;
    std::uint32_t height = 0;
    Bytes cells; // width * height

    bool operator==(const GridMap&) const = default;
  };

  struct Pose {
    double x = 0;
    double y = 0;
    double theta = 0;

    bool operator==(const Pose&) const = default;
  };

  struct Detection {
    std::string label;
    float x = 0, y = 0, w = 0, h = 0;
    float score = 0;

    bool operator==(const Detection&) const = default;
  };

  using Detections = std::vector<Detection>;

  // Canonical little-endian encodings:
  //   image_rgb  : u32 width, u32 height, width*height*3 pixel bytes
  //   grid_map   : u32 width, u32 height, width*height cell bytes
  //   pose       : f64 x, f64 y, f64 theta
  //   detections : u32 count, then per item u16 label length, label bytes,
  //                f32 x, y, w, h, score
  //   blob       : the bytes themselves
  Bytes encode(const ImageRgb& image);
  Bytes encode(const GridMap& grid);
  Bytes encode(const Pose& pose);
  Bytes encode(const Detections& detections);

  // Decoders throw SchemaError on any length or structure mismatch.
  ImageRgb decode_image_rgb(ByteView bytes);
  GridMap decode_grid_map(ByteView bytes);
  Pose decode_pose(ByteView bytes);
  Detections decode_detections(ByteView bytes);

  // Throws SchemaError unless `bytes` is a canonical encoding under `schema`.
  void validate_encoding(SchemaRef schema, ByteView bytes);

} // namespace cloudroid

#endif
