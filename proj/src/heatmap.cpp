#include "mfp/heatmap.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mfp/segvol.hpp"

namespace mfp {

std::vector<std::uint8_t> heatmap_pixels(std::span<const float> map) {
  if (map.empty()) return {};
  const auto [lo_it, hi_it] = std::minmax_element(map.begin(), map.end());
  const double lo = *lo_it, hi = *hi_it;
  std::vector<std::uint8_t> out(map.size(), 128);
  if (!(hi > lo)) return out;
  for (std::size_t i = 0; i < map.size(); ++i) {
    out[i] = static_cast<std::uint8_t>(std::lround(255.0 * (map[i] - lo) / (hi - lo)));
  }
  return out;
}

std::vector<std::uint8_t> encode_pgm(const PgmImage& image) {
  if (image.width < 1 || image.height < 1 ||
      image.pixels.size() != static_cast<std::size_t>(image.width * image.height)) {
    throw ContractError("encode_pgm: pixel count does not match " + std::to_string(image.width) + "x" +
                        std::to_string(image.height));
  }
  const std::string header =
      "P5\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n" + std::to_string(image.max_value) + "\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), image.pixels.begin(), image.pixels.end());
  return out;
}

PgmImage decode_pgm(const std::vector<std::uint8_t>& b) {
  std::size_t pos = 0;
  auto fail = [&](const std::string& what) -> FormatError {
    return FormatError("pgm: " + what + " at byte offset " + std::to_string(pos));
  };
  if (b.size() < 2 || b[0] != 'P' || b[1] != '5') throw fail("bad magic");
  pos = 2;
  auto skip_space = [&] {
    while (pos < b.size()) {
      if (b[pos] == '#') {
        while (pos < b.size() && b[pos] != '\n') ++pos;
      } else if (std::isspace(b[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto number = [&]() -> std::int64_t {
    skip_space();
    const std::size_t start = pos;
    std::int64_t v = 0;
    while (pos < b.size() && std::isdigit(b[pos])) v = v * 10 + (b[pos++] - '0');
    if (pos == start) throw fail("expected a number");
    return v;
  };
  PgmImage img;
  img.width = number();
  img.height = number();
  img.max_value = static_cast<int>(number());
  if (img.max_value < 1 || img.max_value > 255) throw fail("unsupported max value");
  if (pos >= b.size() || !std::isspace(b[pos])) throw fail("missing separator");
  ++pos;
  const auto n = static_cast<std::size_t>(img.width * img.height);
  if (b.size() - pos != n) throw fail("payload holds " + std::to_string(b.size() - pos) + " bytes, expected " + std::to_string(n));
  img.pixels.assign(b.begin() + static_cast<std::ptrdiff_t>(pos), b.end());
  return img;
}

void export_heatmap(const Tensor<float>& map, const std::filesystem::path& path) {
  const auto& s = map.shape();
  const bool plain = s.size() == 2;
  const bool single = s.size() == 4 && s[0] == 1 && s[1] == 1;
  if (!plain && !single) throw ShapeError("heatmap needs a single 2-D map, got " + shape_str(s));
  PgmImage img;
  img.height = s[s.size() - 2];
  img.width = s[s.size() - 1];
  img.pixels = heatmap_pixels(map.data());
  write_file(path, encode_pgm(img));
}

Tensor<float> feature_map(const ModelSpec& spec, const ParameterSet<float>& params, const Tensor<float>& input,
                          const std::string& tap, int channel) {
  Graph<float> g;
  Bound<float> vars;
  for (const auto& [name, t] : params) vars.emplace(name, g.constant(t));
  FeatureTaps<float> taps;
  forward(spec, vars, g.input(input), &taps);

  auto level_of = [&](const std::string& prefix) -> int {
    try {
      return std::stoi(tap.substr(prefix.size()));
    } catch (const std::logic_error&) {
      throw ConfigError("bad feature tap '" + tap + "'");
    }
  };
  auto missing = [&]() { return ConfigError("feature tap '" + tap + "' does not exist in this model"); };
  Var<float> v;
  if (tap.rfind("enc", 0) == 0) {
    const int i = level_of("enc");
    if (i < 1 || i > static_cast<int>(taps.encoder.size())) throw missing();
    v = taps.encoder[static_cast<std::size_t>(i - 1)];
  } else if (tap.rfind("dec", 0) == 0) {
    const int i = level_of("dec");
    if (i < 1 || i > static_cast<int>(taps.decoder.size())) throw missing();
    v = taps.decoder[static_cast<std::size_t>(i - 1)];
  } else if (tap.rfind("branch", 0) == 0) {
    const auto dot = tap.find('.');
    if (dot == std::string::npos) throw ConfigError("branch taps are written branch<level>.<k>");
    int level = 0, k = 0;
    try {
      level = std::stoi(tap.substr(6, dot - 6));
      k = std::stoi(tap.substr(dot + 1));
    } catch (const std::logic_error&) {
      throw ConfigError("bad feature tap '" + tap + "'");
    }
    auto it = taps.branches.find({level, k});
    if (it == taps.branches.end()) throw missing();
    v = it->second;
  } else if (tap.rfind("bica_in", 0) == 0 || tap.rfind("bica_out", 0) == 0) {
    const bool in = tap.rfind("bica_in", 0) == 0;
    const auto& m = in ? taps.bica_input : taps.bica_output;
    auto it = m.find(level_of(in ? "bica_in" : "bica_out"));
    if (it == m.end()) throw missing();
    v = it->second;
  } else {
    throw ConfigError("unknown feature tap '" + tap + "' (expected enc<i>, dec<i>, branch<i>.<k>, bica_in<i>, bica_out<i>)");
  }

  const auto& t = v.value();
  const std::int64_t c = t.dim(1), h = t.dim(2), w = t.dim(3), plane = h * w;
  if (channel >= c) throw ConfigError("channel " + std::to_string(channel) + " out of range for tap '" + tap + "' with " + std::to_string(c) + " channels");
  Tensor<float> out(Shape{h, w});
  for (std::int64_t p = 0; p < plane; ++p) {
    if (channel >= 0) {
      out.data()[static_cast<std::size_t>(p)] = t.ptr()[channel * plane + p];
    } else {
      double s = 0.0;
      for (std::int64_t ch = 0; ch < c; ++ch) s += t.ptr()[ch * plane + p];
      out.data()[static_cast<std::size_t>(p)] = static_cast<float>(s / static_cast<double>(c));
    }
  }
  return out;
}

}  // namespace mfp
