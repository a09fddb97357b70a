#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mfp/model.hpp"

namespace mfp {

// Per-map min-max scaling to 0..255; a constant map becomes 128 everywhere.
std::vector<std::uint8_t> heatmap_pixels(std::span<const float> map);

struct PgmImage {
  std::int64_t width = 0, height = 0;
  int max_value = 255;
  std::vector<std::uint8_t> pixels;
};

std::vector<std::uint8_t> encode_pgm(const PgmImage& image);
// Binary P5 only. Throws FormatError with the byte offset of the fault.
PgmImage decode_pgm(const std::vector<std::uint8_t>& bytes);

// `map` must be H x W, or 1 x 1 x H x W.
void export_heatmap(const Tensor<float>& map, const std::filesystem::path& path);

// Named intermediate map of one forward pass:
//   enc<i>, dec<i>, branch<i>.<k>, bica_in<i>, bica_out<i>
// `channel` < 0 averages over channels. Returns H x W for batch item 0.
Tensor<float> feature_map(const ModelSpec& spec, const ParameterSet<float>& params, const Tensor<float>& input,
                          const std::string& tap, int channel);

}  // namespace mfp
