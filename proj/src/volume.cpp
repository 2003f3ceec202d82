#include "slicefusion/volume.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>

#include "slicefusion/io.hpp"

namespace slicefusion {

Volume::Volume(std::size_t depth, std::size_t height, std::size_t width, double fill)
    : depth_(depth), height_(height), width_(width), voxels_(depth * height * width, fill) {
  if (!depth || !height || !width) throw VolumeError("volume dimensions must be positive");
}

Volume::Volume(std::size_t depth, std::size_t height, std::size_t width, std::vector<double> voxels, bool windowed)
    : depth_(depth), height_(height), width_(width), voxels_(std::move(voxels)), windowed_(windowed) {
  if (!depth || !height || !width) throw VolumeError("volume dimensions must be positive");
  if (voxels_.size() != depth * height * width) {
    throw VolumeError("volume " + std::to_string(depth) + "x" + std::to_string(height) + "x" + std::to_string(width) +
                      " does not match " + std::to_string(voxels_.size()) + " voxels");
  }
  if (windowed_ && std::any_of(voxels_.begin(), voxels_.end(), [](double x) { return x < 0.0 || x > 1.0; })) {
    throw VolumeError("windowed volume has voxels outside [0, 1]");
  }
}

std::span<const double> Volume::slice(std::size_t j) const {
  if (j >= depth_) throw std::out_of_range("slice index " + std::to_string(j) + " >= depth " + std::to_string(depth_));
  return std::span<const double>(voxels_).subspan(j * slice_size(), slice_size());
}

Volume hu_window(const Volume& raw) {
  if (raw.windowed()) throw VolumeError("hu_window: volume is already windowed");
  std::vector<double> out(raw.voxels().begin(), raw.voxels().end());
  for (auto& x : out) x = (std::clamp(x, kHuLow, kHuHigh) - kHuLow) / (kHuHigh - kHuLow);
  return Volume(raw.depth(), raw.height(), raw.width(), std::move(out), true);
}

namespace {

struct Lerp {
  std::size_t lo, hi;
  double t;
};

// Corner-aligned: output index 0 maps to input 0, the last output to the last input.
std::vector<Lerp> axis_weights(std::size_t in, std::size_t out) {
  std::vector<Lerp> w(out);
  for (std::size_t i = 0; i < out; ++i) {
    if (in == 1 || out == 1) {
      w[i] = {0, 0, 0.0};
      continue;
    }
    const double pos = static_cast<double>(i) * static_cast<double>(in - 1) / static_cast<double>(out - 1);
    auto lo = static_cast<std::size_t>(std::floor(pos));
    lo = std::min(lo, in - 1);
    const std::size_t hi = std::min(lo + 1, in - 1);
    w[i] = {lo, hi, pos - static_cast<double>(lo)};
  }
  return w;
}

}  // namespace

Volume resize(const Volume& v, std::size_t depth, std::size_t height, std::size_t width) {
  if (!depth || !height || !width) throw VolumeError("resize: target dimensions must be positive");
  if (depth == v.depth() && height == v.height() && width == v.width()) return v;
  const auto wd = axis_weights(v.depth(), depth);
  const auto wh = axis_weights(v.height(), height);
  const auto ww = axis_weights(v.width(), width);
  std::vector<double> out(depth * height * width);
  for (std::size_t j = 0; j < depth; ++j)
    for (std::size_t y = 0; y < height; ++y)
      for (std::size_t x = 0; x < width; ++x) {
        const auto& a = wd[j];
        const auto& b = wh[y];
        const auto& c = ww[x];
        auto plane = [&](std::size_t jj) {
          const double top = (1 - c.t) * v.at(jj, b.lo, c.lo) + c.t * v.at(jj, b.lo, c.hi);
          const double bottom = (1 - c.t) * v.at(jj, b.hi, c.lo) + c.t * v.at(jj, b.hi, c.hi);
          return (1 - b.t) * top + b.t * bottom;
        };
        out[(j * height + y) * width + x] = (1 - a.t) * plane(a.lo) + a.t * plane(a.hi);
      }
  if (v.windowed()) {
    for (auto& x : out) x = std::clamp(x, 0.0, 1.0);
  }
  return Volume(depth, height, width, std::move(out), v.windowed());
}

namespace {

constexpr std::string_view kMagic = "MVOL1\n";
constexpr std::size_t kMaxExtent = std::size_t{1} << 20;

void put_f32_le(std::string& buf, float f) {
  auto bits = std::bit_cast<std::uint32_t>(f);
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((bits >> (8 * i)) & 0xffu));
}

float get_f32_le(const unsigned char* p) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return std::bit_cast<float>(bits);
}

}  // namespace

void write_mvol(const Volume& v, const std::filesystem::path& path) {
  std::string buf(kMagic);
  buf += std::to_string(v.depth()) + " " + std::to_string(v.height()) + " " + std::to_string(v.width()) + "\n";
  buf.reserve(buf.size() + 4 * v.size());
  for (double x : v.voxels()) put_f32_le(buf, static_cast<float>(x));
  write_file_atomic(path, buf);
}

Volume read_mvol(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw VolumeError("cannot open volume file " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.compare(0, kMagic.size(), kMagic) != 0) throw VolumeError("bad magic in " + path.string());
  const auto eol = bytes.find('\n', kMagic.size());
  if (eol == std::string::npos) throw VolumeError("truncated header in " + path.string());
  std::istringstream header(bytes.substr(kMagic.size(), eol - kMagic.size()));
  long long n = 0, h = 0, w = 0;
  std::string rest;
  if (!(header >> n >> h >> w) || (header >> rest)) throw VolumeError("malformed dimension line in " + path.string());
  if (n <= 0 || h <= 0 || w <= 0) throw VolumeError("non-positive dimensions in " + path.string());
  if (static_cast<std::size_t>(n) > kMaxExtent || static_cast<std::size_t>(h) > kMaxExtent ||
      static_cast<std::size_t>(w) > kMaxExtent) {
    throw VolumeError("dimension overflow in " + path.string());
  }
  const auto un = static_cast<std::size_t>(n), uh = static_cast<std::size_t>(h), uw = static_cast<std::size_t>(w);
  if (uh * uw > std::numeric_limits<std::size_t>::max() / 4 / un) throw VolumeError("dimension overflow in " + path.string());
  const std::size_t count = un * uh * uw;
  const std::size_t payload = bytes.size() - (eol + 1);
  if (payload > 4 * count) throw VolumeError("trailing data after voxel payload in " + path.string());
  if (payload < 4 * count) {
    throw VolumeError("truncated payload in " + path.string() + ": expected " + std::to_string(count) + " voxels, found " +
                      std::to_string(payload / 4) + (payload % 4 ? " and a partial value" : ""));
  }
  std::vector<double> voxels(count);
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + eol + 1);
  for (std::size_t i = 0; i < count; ++i) voxels[i] = get_f32_le(p + 4 * i);
  return Volume(un, uh, uw, std::move(voxels));
}

}  // namespace slicefusion
