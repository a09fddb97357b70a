#pragma once

#include <map>
#include <string>
#include <vector>

#include "mfp/bica.hpp"
#include "mfp/parameters.hpp"

namespace mfp {

enum class Variant { Unet, UnetAdd, Mfp1, Mfp2, MfpBica };

std::string variant_name(Variant v);
Variant parse_variant(const std::string& s);

struct ModelSpec {
  Variant variant = Variant::Mfp2;
  int levels = 5;
  int base_channels = 16;
  int input_channels = 1;
  int classes = 6;
  // Square slice extent; the attention row count depends on it.
  std::int64_t image_size = 64;
  // Reuse branches emit C/2 channels when set, C otherwise.
  bool halve_branch_channels = true;
  MaskActivation mask_activation = MaskActivation::Sigmoid;

  std::int64_t channels(int level) const { return std::int64_t{base_channels} << (level - 1); }
  std::int64_t extent(int level) const { return image_size >> (level - 1); }
  std::int64_t branch_channels(int level) const {
    return halve_branch_channels ? std::max<std::int64_t>(channels(level) / 2, 1) : channels(level);
  }
  bool uses_pyramid() const { return variant == Variant::Mfp1 || variant == Variant::Mfp2 || variant == Variant::MfpBica; }
  // Highest branch index k emitted from `level`.
  int max_branch(int level) const;

  // Throws ConfigError naming the offending field.
  void validate() const;

  // Returns false for an unknown key; throws ConfigError on a bad value.
  bool set(const std::string& key, const std::string& value);
  // key=value lines.
  std::string to_text() const;
  static ModelSpec from_text(const std::string& text);

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

struct Model {
  ModelSpec spec;
  ParameterSet<float> params;
  // Human-readable description of every junction and branch.
  std::string wiring;
};

Model build_model(const ModelSpec& spec, std::uint64_t seed);

template <typename T>
using Bound = std::map<std::string, Var<T>>;

// Intermediate maps kept for inspection (heat maps, tests).
template <typename T>
struct FeatureTaps {
  std::vector<Var<T>> encoder;                     // X_E^1..X_E^n
  std::map<std::pair<int, int>, Var<T>> branches;  // (source level, k) -> X_F
  std::vector<Var<T>> decoder;                     // X_D^1..X_D^{n-1}
  std::map<int, Var<T>> bica_input, bica_output;   // junction level -> O, fused result
};

// Encoder maps X_E^1..X_E^n. The deepest level consumes the concatenated
// reuse branches for pyramid variants and the pooled level n-1 otherwise.
template <typename T>
std::vector<Var<T>> encode(const ModelSpec& spec, const Bound<T>& vars, const Var<T>& input,
                           FeatureTaps<T>* taps = nullptr);

// X_F for source map X_E^level and branch k: a stride-2^k, dilation-2^k
// 3x3 convolution followed by group norm and relu. k = 0 is the plain skip
// and returns the source unchanged.
template <typename T>
Var<T> reuse_branch(const ModelSpec& spec, const Bound<T>& vars, const Var<T>& source, int level, int k);

enum class SkipJoin { Sum, Concat };

// One decoder step toward junction `level`: upsample(H(previous)) joined
// with `fused`, where H is the block of level + 1 and the upsampling halves
// the channel count.
template <typename T>
Var<T> decode_step(const ModelSpec& spec, const Bound<T>& vars, const Var<T>& previous, const Var<T>& fused,
                   int level, SkipJoin join = SkipJoin::Sum);

// Logits B x K x H x W.
template <typename T>
Var<T> forward(const ModelSpec& spec, const Bound<T>& vars, const Var<T>& input, FeatureTaps<T>* taps = nullptr);

}  // namespace mfp
