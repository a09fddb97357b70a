#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "mfp/error.hpp"

namespace mfp {

// (D, H, W) extents and millimetres per voxel along the same axes.
using Dims3 = std::array<std::int64_t, 3>;
using Spacing3 = std::array<float, 3>;

template <typename V>
struct Volume {
  Dims3 dims{0, 0, 0};
  Spacing3 spacing{1.0f, 1.0f, 1.0f};
  std::vector<V> voxels;

  Volume() = default;
  Volume(Dims3 d, Spacing3 s, V fill = V{}) : dims(d), spacing(s) {
    for (auto e : d) {
      if (e < 1) throw ShapeError("volume extents must be >= 1");
    }
    voxels.assign(static_cast<std::size_t>(d[0] * d[1] * d[2]), fill);
  }

  std::size_t size() const { return voxels.size(); }
  std::int64_t slice_size() const { return dims[1] * dims[2]; }
  std::size_t index(std::int64_t z, std::int64_t y, std::int64_t x) const {
    return static_cast<std::size_t>((z * dims[1] + y) * dims[2] + x);
  }
  V& at(std::int64_t z, std::int64_t y, std::int64_t x) { return voxels[index(z, y, x)]; }
  const V& at(std::int64_t z, std::int64_t y, std::int64_t x) const { return voxels[index(z, y, x)]; }

  friend bool operator==(const Volume&, const Volume&) = default;
};

using LabelVolume = Volume<std::uint8_t>;
using ImageVolume = Volume<float>;

// Structures in report order; label id = position + 1.
inline constexpr int kOrganCount = 5;
inline const std::array<std::string, kOrganCount> kOrganNames = {"anal canal", "bladder", "rectum", "femoral head L",
                                                                  "femoral head R"};

}  // namespace mfp
