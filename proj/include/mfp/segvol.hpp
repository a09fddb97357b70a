#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mfp/volume.hpp"

namespace mfp {

// Binary volume file, little-endian:
//   0  "SVOL"
//   4  u16 version (1)
//   6  u32 D, H, W
//   18 f32 spacing D, H, W
//   30 u8 dtype (0 = f32 image, 1 = u8 labels)
//   31 payload, row-major
inline constexpr std::uint16_t kSegVolVersion = 1;
inline constexpr std::size_t kSegVolHeaderSize = 31;

enum class SegVolDtype : std::uint8_t { F32 = 0, U8 = 1 };

struct SegVol {
  SegVolDtype dtype = SegVolDtype::F32;
  ImageVolume image;   // set when dtype == F32
  LabelVolume labels;  // set when dtype == U8
};

std::vector<std::uint8_t> encode_segvol(const ImageVolume& v);
std::vector<std::uint8_t> encode_segvol(const LabelVolume& v);
// Throws FormatError with the byte offset of the first fault.
SegVol decode_segvol(const std::vector<std::uint8_t>& bytes);

void write_segvol(const std::filesystem::path& path, const ImageVolume& v);
void write_segvol(const std::filesystem::path& path, const LabelVolume& v);
SegVol read_segvol(const std::filesystem::path& path);
ImageVolume read_image(const std::filesystem::path& path);
LabelVolume read_labels(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);
void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

struct SplitManifest {
  std::vector<std::string> train, val, test;
  std::string to_text() const;
  static SplitManifest parse(const std::string& text);
};

// Seeded shuffle, then round(0.66 n) train, round(0.11 n) val, rest test.
SplitManifest make_split(std::vector<std::string> case_ids, std::uint64_t seed);

}  // namespace mfp
