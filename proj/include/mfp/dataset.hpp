#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "mfp/augment.hpp"
#include "mfp/phantom.hpp"
#include "mfp/segvol.hpp"

namespace mfp {

struct CaseData {
  std::string id;
  ImageVolume image;
  LabelVolume labels;
};

std::string case_id(int index);  // "case_000"
std::filesystem::path image_path(const std::filesystem::path& dir, const std::string& id);
std::filesystem::path label_path(const std::filesystem::path& dir, const std::string& id);
std::filesystem::path manifest_path(const std::filesystem::path& dir);

// Writes `count` phantom cases and a split manifest into `dir`. Case i uses
// phantom seed derive_seed(seed, i).
SplitManifest generate_dataset(const std::filesystem::path& dir, int count, const Dims3& dims, std::uint64_t seed);

// Loads every listed case. Missing files are collected and reported together
// in one IoError before anything is read.
std::vector<CaseData> load_cases(const std::filesystem::path& dir, const std::vector<std::string>& ids);

// Axial slice z of a case. Requires H == W.
Slice axial_slice(const CaseData& c, std::int64_t z);

}  // namespace mfp
