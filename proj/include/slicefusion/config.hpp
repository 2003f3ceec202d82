#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace slicefusion {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Volume extents, patch geometry and widths shared by the three encoders.
struct EncoderConfig {
  std::size_t depth = 32;  // N
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t patch_depth = 4;  // 3D patch extents
  std::size_t patch_height = 16;
  std::size_t patch_width = 16;
  std::size_t pool = 1;        // 3D connector pooling factor
  std::size_t hidden = 32;     // common feature width D
  std::size_t tokens_2d = 16;  // tokens per slice from the 2D branch
  std::size_t text_dim = 32;
  bool mixing = false;  // cross-patch token mixing layer in both image encoders

  void validate() const;

  std::size_t grid_depth() const { return depth / patch_depth; }
  std::size_t grid_height() const { return height / patch_height; }
  std::size_t grid_width() const { return width / patch_width; }
  /// 3D tokens before the connector pools them.
  std::size_t pre_pool_tokens() const { return grid_depth() * grid_height() * grid_width(); }
  std::size_t pooled_depth() const { return grid_depth() / pool; }
  std::size_t pooled_height() const { return grid_height() / pool; }
  std::size_t pooled_width() const { return grid_width() / pool; }
  /// Length of the 3D feature sequence after the connector.
  std::size_t tokens_3d() const { return pooled_depth() * pooled_height() * pooled_width(); }
  /// Per-slice 3D tokens after alignment to the slice axis.
  std::size_t slice_tokens() const { return pooled_height() * pooled_width(); }
  /// Slices covered by one pooled depth layer.
  std::size_t replication() const { return patch_depth * pool; }
  std::size_t patch_voxels_3d() const { return patch_depth * patch_height * patch_width; }
  /// Side of the square 2D patch that yields tokens_2d tokens per slice.
  std::size_t patch_side_2d() const;

  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

struct DecoderConfig {
  std::size_t width = 32;
  std::size_t ff_hidden = 64;
  std::size_t vocab = 64;
  std::size_t max_len = 8;

  void validate() const;
  friend bool operator==(const DecoderConfig&, const DecoderConfig&) = default;
};

struct ModelConfig {
  EncoderConfig encoder;
  DecoderConfig decoder;

  void validate() const {
    encoder.validate();
    decoder.validate();
  }
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

}  // namespace slicefusion
