#include "mfp/dataset.hpp"

#include <cstdio>

namespace mfp {

std::string case_id(int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "case_%03d", index);
  return buf;
}

std::filesystem::path image_path(const std::filesystem::path& dir, const std::string& id) {
  return dir / (id + "_image.svol");
}

std::filesystem::path label_path(const std::filesystem::path& dir, const std::string& id) {
  return dir / (id + "_labels.svol");
}

std::filesystem::path manifest_path(const std::filesystem::path& dir) { return dir / "split.csv"; }

SplitManifest generate_dataset(const std::filesystem::path& dir, int count, const Dims3& dims, std::uint64_t seed) {
  if (count < 1) throw ConfigError("case count must be >= 1");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory '" + dir.string() + "': " + ec.message());
  std::vector<std::string> ids;
  for (int i = 0; i < count; ++i) {
    PhantomSpec spec;
    spec.seed = derive_seed(seed, static_cast<std::uint64_t>(i));
    spec.dims = dims;
    const Phantom p = generate_phantom(spec);
    ids.push_back(case_id(i));
    write_segvol(image_path(dir, ids.back()), p.image);
    write_segvol(label_path(dir, ids.back()), p.labels);
  }
  SplitManifest m = make_split(ids, seed);
  write_text(manifest_path(dir), m.to_text());
  return m;
}

std::vector<CaseData> load_cases(const std::filesystem::path& dir, const std::vector<std::string>& ids) {
  std::string missing;
  for (const auto& id : ids) {
    for (const auto& p : {image_path(dir, id), label_path(dir, id)}) {
      if (!std::filesystem::exists(p)) missing += (missing.empty() ? "" : ", ") + p.string();
    }
  }
  if (!missing.empty()) throw IoError("missing case files: " + missing);
  std::vector<CaseData> out;
  for (const auto& id : ids) {
    CaseData c{id, read_image(image_path(dir, id)), read_labels(label_path(dir, id))};
    if (c.image.dims != c.labels.dims) throw FormatError("case '" + id + "': image and label dims differ");
    out.push_back(std::move(c));
  }
  return out;
}

Slice axial_slice(const CaseData& c, std::int64_t z) {
  const auto h = c.image.dims[1], w = c.image.dims[2];
  if (h != w) throw ShapeError("case '" + c.id + "': slices must be square");
  if (z < 0 || z >= c.image.dims[0]) throw ContractError("slice index out of range");
  const auto n = static_cast<std::size_t>(h * w);
  const auto off = static_cast<std::ptrdiff_t>(z * h * w);
  Slice s;
  s.size = h;
  s.image.assign(c.image.voxels.begin() + off, c.image.voxels.begin() + off + static_cast<std::ptrdiff_t>(n));
  s.labels.assign(c.labels.voxels.begin() + off, c.labels.voxels.begin() + off + static_cast<std::ptrdiff_t>(n));
  return s;
}

}  // namespace mfp
