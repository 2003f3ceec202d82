#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <vector>

namespace slicefusion {

class VolumeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A depth x height x width scalar image. Voxel (j, y, x) lives at j*H*W + y*W + x.
class Volume {
 public:
  Volume() = default;
  Volume(std::size_t depth, std::size_t height, std::size_t width, double fill = 0.0);
  Volume(std::size_t depth, std::size_t height, std::size_t width, std::vector<double> voxels,
         bool windowed = false);

  std::size_t depth() const { return depth_; }
  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t slice_size() const { return height_ * width_; }
  std::size_t size() const { return voxels_.size(); }
  bool windowed() const { return windowed_; }

  double& at(std::size_t j, std::size_t y, std::size_t x) { return voxels_[(j * height_ + y) * width_ + x]; }
  double at(std::size_t j, std::size_t y, std::size_t x) const { return voxels_[(j * height_ + y) * width_ + x]; }

  std::span<const double> voxels() const { return voxels_; }
  std::span<double> voxels() { return voxels_; }
  std::span<const double> slice(std::size_t j) const;

  friend bool operator==(const Volume&, const Volume&) = default;

 private:
  std::size_t depth_ = 0, height_ = 0, width_ = 0;
  std::vector<double> voxels_;
  bool windowed_ = false;
};

inline constexpr double kHuLow = -1000.0;
inline constexpr double kHuHigh = 1000.0;

/// Clips raw HU values to [-1000, 1000] and maps them linearly onto [0, 1].
Volume hu_window(const Volume& raw);

/// Trilinear resampling with corner-aligned sample positions.
Volume resize(const Volume& v, std::size_t depth, std::size_t height, std::size_t width);

/// MVOL: "MVOL1\n", "N H W\n", then N*H*W little-endian float32 voxels.
void write_mvol(const Volume& v, const std::filesystem::path& path);
Volume read_mvol(const std::filesystem::path& path);

}  // namespace slicefusion
