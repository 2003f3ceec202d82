#include "slicefusion/config.hpp"

#include <cmath>

namespace slicefusion {

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError(what);
}

}  // namespace

std::size_t EncoderConfig::patch_side_2d() const {
  if (tokens_2d == 0) return 0;
  const std::size_t area = (height * width) / tokens_2d;
  auto side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(area))));
  return side * side == area ? side : 0;
}

void EncoderConfig::validate() const {
  require(depth && height && width, "volume dimensions must be positive");
  require(patch_depth && patch_height && patch_width, "3D patch extents must be positive");
  require(pool >= 1, "pool must be >= 1");
  require(hidden >= 1 && text_dim >= 1, "feature widths must be positive");
  require(depth % (patch_depth * pool) == 0,
          "depth " + std::to_string(depth) + " not divisible by patch_depth*pool " + std::to_string(patch_depth * pool));
  require(height % (patch_height * pool) == 0, "height " + std::to_string(height) +
                                                   " not divisible by patch_height*pool " +
                                                   std::to_string(patch_height * pool));
  require(width % (patch_width * pool) == 0,
          "width " + std::to_string(width) + " not divisible by patch_width*pool " + std::to_string(patch_width * pool));
  const std::size_t side = patch_side_2d();
  require(tokens_2d >= 1 && side >= 1 && height % side == 0 && width % side == 0 &&
              (height / side) * (width / side) == tokens_2d,
          "tokens_2d " + std::to_string(tokens_2d) + " cannot be tiled by square patches over " +
              std::to_string(height) + "x" + std::to_string(width));
}

void DecoderConfig::validate() const {
  require(width >= 1 && ff_hidden >= 1, "decoder widths must be positive");
  require(vocab >= 2, "vocabulary size must be >= 2");
  require(max_len >= 1, "max_len must be >= 1");
}

}  // namespace slicefusion
