#include "mfp/segvol.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "mfp/random.hpp"

namespace mfp {
namespace {

void put_u16(std::vector<std::uint8_t>& b, std::uint16_t v) {
  b.push_back(static_cast<std::uint8_t>(v));
  b.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f32(std::vector<std::uint8_t>& b, float v) { put_u32(b, std::bit_cast<std::uint32_t>(v)); }

std::uint32_t get_u32(const std::vector<std::uint8_t>& b, std::size_t off) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[off + static_cast<std::size_t>(i)]) << (8 * i);
  return v;
}

template <typename V>
void put_header(std::vector<std::uint8_t>& b, const Volume<V>& v, SegVolDtype dtype) {
  b.insert(b.end(), {'S', 'V', 'O', 'L'});
  put_u16(b, kSegVolVersion);
  for (auto d : v.dims) {
    if (d < 1 || d > 0xFFFFFFFFLL) throw ContractError("segvol: extent out of range");
    put_u32(b, static_cast<std::uint32_t>(d));
  }
  for (auto s : v.spacing) put_f32(b, s);
  b.push_back(static_cast<std::uint8_t>(dtype));
}

FormatError format_error(std::size_t offset, const std::string& what) {
  return FormatError("segvol: " + what + " at byte offset " + std::to_string(offset));
}

}  // namespace

std::vector<std::uint8_t> encode_segvol(const ImageVolume& v) {
  std::vector<std::uint8_t> b;
  b.reserve(kSegVolHeaderSize + 4 * v.size());
  put_header(b, v, SegVolDtype::F32);
  for (float x : v.voxels) put_f32(b, x);
  return b;
}

std::vector<std::uint8_t> encode_segvol(const LabelVolume& v) {
  std::vector<std::uint8_t> b;
  b.reserve(kSegVolHeaderSize + v.size());
  put_header(b, v, SegVolDtype::U8);
  b.insert(b.end(), v.voxels.begin(), v.voxels.end());
  return b;
}

SegVol decode_segvol(const std::vector<std::uint8_t>& b) {
  if (b.size() < 4) throw format_error(b.size(), "file shorter than magic");
  if (std::memcmp(b.data(), "SVOL", 4) != 0) throw format_error(0, "bad magic");
  if (b.size() < kSegVolHeaderSize) throw format_error(b.size(), "truncated header");
  const std::uint16_t version = static_cast<std::uint16_t>(b[4] | (b[5] << 8));
  if (version != kSegVolVersion) throw format_error(4, "unsupported version " + std::to_string(version));
  Dims3 dims{};
  Spacing3 spacing{};
  for (int i = 0; i < 3; ++i) {
    const auto off = 6 + 4 * static_cast<std::size_t>(i);
    dims[static_cast<std::size_t>(i)] = get_u32(b, off);
    if (dims[static_cast<std::size_t>(i)] == 0) throw format_error(off, "zero extent");
  }
  for (int i = 0; i < 3; ++i) {
    const auto off = 18 + 4 * static_cast<std::size_t>(i);
    spacing[static_cast<std::size_t>(i)] = std::bit_cast<float>(get_u32(b, off));
    if (!(spacing[static_cast<std::size_t>(i)] > 0.0f) || !std::isfinite(spacing[static_cast<std::size_t>(i)])) {
      throw format_error(off, "spacing must be positive");
    }
  }
  const std::uint8_t code = b[30];
  if (code > 1) throw format_error(30, "unknown dtype code " + std::to_string(code));
  SegVol out;
  out.dtype = static_cast<SegVolDtype>(code);
  const std::size_t count = static_cast<std::size_t>(dims[0] * dims[1] * dims[2]);
  const std::size_t elem = out.dtype == SegVolDtype::F32 ? 4 : 1;
  const std::size_t want = kSegVolHeaderSize + count * elem;
  if (b.size() < want) {
    throw format_error(b.size(), "truncated payload: expected " + std::to_string(count) + " elements (" +
                                     std::to_string(want) + " bytes), file has " + std::to_string(b.size()));
  }
  if (b.size() > want) throw format_error(want, "trailing bytes after payload");
  if (out.dtype == SegVolDtype::F32) {
    out.image = ImageVolume(dims, spacing);
    for (std::size_t i = 0; i < count; ++i) out.image.voxels[i] = std::bit_cast<float>(get_u32(b, kSegVolHeaderSize + 4 * i));
  } else {
    out.labels = LabelVolume(dims, spacing);
    std::copy(b.begin() + kSegVolHeaderSize, b.end(), out.labels.voxels.begin());
  }
  return out;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::vector<std::uint8_t> b((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return b;
}

void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  write_file(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

std::string read_text(const std::filesystem::path& path) {
  const auto b = read_file(path);
  return std::string(b.begin(), b.end());
}

void write_segvol(const std::filesystem::path& path, const ImageVolume& v) { write_file(path, encode_segvol(v)); }
void write_segvol(const std::filesystem::path& path, const LabelVolume& v) { write_file(path, encode_segvol(v)); }

SegVol read_segvol(const std::filesystem::path& path) {
  try {
    return decode_segvol(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

ImageVolume read_image(const std::filesystem::path& path) {
  auto v = read_segvol(path);
  if (v.dtype != SegVolDtype::F32) throw FormatError(path.string() + ": expected f32 image volume (dtype at byte offset 30)");
  return std::move(v.image);
}

LabelVolume read_labels(const std::filesystem::path& path) {
  auto v = read_segvol(path);
  if (v.dtype != SegVolDtype::U8) throw FormatError(path.string() + ": expected u8 label volume (dtype at byte offset 30)");
  return std::move(v.labels);
}

std::string SplitManifest::to_text() const {
  std::ostringstream os;
  os << "split,case_id\n";
  for (const auto& c : train) os << "train," << c << "\n";
  for (const auto& c : val) os << "val," << c << "\n";
  for (const auto& c : test) os << "test," << c << "\n";
  return os.str();
}

SplitManifest SplitManifest::parse(const std::string& text) {
  SplitManifest m;
  std::istringstream is(text);
  std::string line;
  std::set<std::string> seen;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || (lineno == 1 && line == "split,case_id")) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw FormatError("manifest line " + std::to_string(lineno) + ": missing ','");
    const std::string split = line.substr(0, comma), id = line.substr(comma + 1);
    if (!seen.insert(id).second) throw FormatError("manifest line " + std::to_string(lineno) + ": duplicate case '" + id + "'");
    if (split == "train") {
      m.train.push_back(id);
    } else if (split == "val") {
      m.val.push_back(id);
    } else if (split == "test") {
      m.test.push_back(id);
    } else {
      throw FormatError("manifest line " + std::to_string(lineno) + ": unknown split '" + split + "'");
    }
  }
  return m;
}

SplitManifest make_split(std::vector<std::string> ids, std::uint64_t seed) {
  std::sort(ids.begin(), ids.end());
  Rng rng(derive_seed(seed, 17));
  for (std::size_t i = ids.size(); i > 1; --i) std::swap(ids[i - 1], ids[rng.below(i)]);
  const auto n = static_cast<double>(ids.size());
  auto n_train = static_cast<std::size_t>(std::lround(0.66 * n));
  auto n_val = static_cast<std::size_t>(std::lround(0.11 * n));
  if (ids.size() >= 3) {
    n_val = std::max<std::size_t>(n_val, 1);
    n_train = std::min(n_train, ids.size() - n_val - 1);
  }
  n_train = std::min(n_train, ids.size());
  n_val = std::min(n_val, ids.size() - n_train);
  SplitManifest m;
  m.train.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_train));
  m.val.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train),
               ids.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  m.test.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), ids.end());
  for (auto* part : {&m.train, &m.val, &m.test}) std::sort(part->begin(), part->end());
  return m;
}

}  // namespace mfp
