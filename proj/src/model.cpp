#include "mfp/model.hpp"

#include <algorithm>
#include <sstream>

#include "mfp/config.hpp"
#include "mfp/init.hpp"

namespace mfp {
namespace {

template <typename T>
const Var<T>& lookup(const Bound<T>& vars, const std::string& name) {
  auto it = vars.find(name);
  if (it == vars.end()) throw ContractError("missing parameter '" + name + "'");
  return it->second;
}

// conv3x3 -> group norm -> relu, twice.
template <typename T>
Var<T> conv_block(const Bound<T>& vars, const std::string& prefix, Var<T> x) {
  for (const char* stage : {"1", "2"}) {
    const std::string s = prefix + ".c" + stage;
    x = conv2d(x, lookup(vars, s + ".w"));
    const std::string n = prefix + ".n" + stage;
    x = relu(group_norm(x, lookup(vars, n + ".g"), lookup(vars, n + ".b"), group_count_for(x.dim(1))));
  }
  return x;
}

void add_block(ParameterSet<float>& p, const std::string& prefix, std::int64_t in, std::int64_t out,
               std::uint64_t seed) {
  add_conv(p, prefix + ".c1", out, in, 3, false, seed);
  add_norm(p, prefix + ".n1", out);
  add_conv(p, prefix + ".c2", out, out, 3, false, seed);
  add_norm(p, prefix + ".n2", out);
}

std::string level_name(const char* what, int level) { return what + std::to_string(level); }
std::string branch_name(int level, int k) { return "br" + std::to_string(level) + "." + std::to_string(k); }

// Channel count of the concatenated branches arriving at `target`.
std::int64_t incoming_branch_channels(const ModelSpec& spec, int target) {
  std::int64_t c = 0;
  for (int s = 1; s < target; ++s) {
    if (target - s <= spec.max_branch(s)) c += spec.branch_channels(s);
  }
  return c;
}

}  // namespace

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::Unet:
      return "unet";
    case Variant::UnetAdd:
      return "unet-add";
    case Variant::Mfp1:
      return "mfp1";
    case Variant::Mfp2:
      return "mfp2";
    case Variant::MfpBica:
      return "mfp-bica";
  }
  return "?";
}

Variant parse_variant(const std::string& s) {
  for (auto v : {Variant::Unet, Variant::UnetAdd, Variant::Mfp1, Variant::Mfp2, Variant::MfpBica}) {
    if (variant_name(v) == s) return v;
  }
  throw ConfigError("unknown variant '" + s + "' (expected unet, unet-add, mfp1, mfp2, mfp-bica)");
}

int ModelSpec::max_branch(int level) const {
  if (!uses_pyramid() || level >= levels) return 0;
  return variant == Variant::Mfp1 ? 1 : levels - level;
}

void ModelSpec::validate() const {
  if (levels < 2) throw ConfigError("levels must be >= 2, got " + std::to_string(levels));
  if (levels > 8) throw ConfigError("levels must be <= 8, got " + std::to_string(levels));
  if (base_channels < 2) throw ConfigError("base_channels must be >= 2");
  if (input_channels < 1) throw ConfigError("input_channels must be >= 1");
  if (classes < 2) throw ConfigError("classes must be >= 2");
  const std::int64_t unit = std::int64_t{1} << (levels - 1);
  if (image_size < unit || image_size % unit != 0) {
    throw ConfigError("image_size " + std::to_string(image_size) + " must be a positive multiple of " +
                      std::to_string(unit));
  }
}

bool ModelSpec::set(const std::string& key, const std::string& value) {
  if (key == "variant") {
    variant = parse_variant(value);
  } else if (key == "levels") {
    levels = static_cast<int>(parse_int(key, value));
  } else if (key == "base_channels") {
    base_channels = static_cast<int>(parse_int(key, value));
  } else if (key == "input_channels") {
    input_channels = static_cast<int>(parse_int(key, value));
  } else if (key == "classes") {
    classes = static_cast<int>(parse_int(key, value));
  } else if (key == "image_size") {
    image_size = parse_int(key, value);
  } else if (key == "halve_branch_channels") {
    halve_branch_channels = parse_bool(key, value);
  } else if (key == "mask_activation") {
    if (value == "sigmoid") {
      mask_activation = MaskActivation::Sigmoid;
    } else if (value == "identity") {
      mask_activation = MaskActivation::Identity;
    } else {
      throw ConfigError("bad mask_activation '" + value + "' (expected sigmoid or identity)");
    }
  } else {
    return false;
  }
  return true;
}

std::string ModelSpec::to_text() const {
  std::ostringstream os;
  os << "variant=" << variant_name(variant) << "\n"
     << "levels=" << levels << "\n"
     << "base_channels=" << base_channels << "\n"
     << "input_channels=" << input_channels << "\n"
     << "classes=" << classes << "\n"
     << "image_size=" << image_size << "\n"
     << "halve_branch_channels=" << (halve_branch_channels ? "true" : "false") << "\n"
     << "mask_activation=" << (mask_activation == MaskActivation::Sigmoid ? "sigmoid" : "identity") << "\n";
  return os.str();
}

ModelSpec ModelSpec::from_text(const std::string& text) {
  ModelSpec spec;
  for_each_setting(text, [&](const std::string& key, const std::string& value) {
    if (!spec.set(key, value)) throw ConfigError("unknown model spec key '" + key + "'");
  });
  spec.validate();
  return spec;
}

Model build_model(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  Model m;
  m.spec = spec;
  auto& p = m.params;
  std::ostringstream w;
  const int n = spec.levels;
  w << "variant " << variant_name(spec.variant) << ", " << n << " levels, C1=" << spec.base_channels << "\n";

  for (int i = 1; i <= n; ++i) {
    std::int64_t in = i == 1 ? spec.input_channels : spec.channels(i - 1);
    std::string from = i == 1 ? "input" : "maxpool(enc" + std::to_string(i - 1) + ")";
    if (i == n && spec.uses_pyramid()) {
      in = incoming_branch_channels(spec, n);
      from = "concat(branches -> level " + std::to_string(n) + ")";
    }
    add_block(p, level_name("enc", i), in, spec.channels(i), seed);
    w << "enc" << i << ": block(" << from << ", " << in << " -> " << spec.channels(i) << ") at "
      << spec.extent(i) << "x" << spec.extent(i) << "\n";
  }
  for (int s = 1; s < n; ++s) {
    for (int k = 1; k <= spec.max_branch(s); ++k) {
      const auto name = branch_name(s, k);
      add_conv(p, name + ".c", spec.branch_channels(s), spec.channels(s), 3, false, seed);
      add_norm(p, name + ".n", spec.branch_channels(s));
      w << name << ": conv3x3 dilation " << (1 << k) << " stride " << (1 << k) << " enc" << s << " "
        << spec.channels(s) << " -> " << spec.branch_channels(s) << " at " << spec.extent(s + k) << "x"
        << spec.extent(s + k) << " -> level " << s + k << "\n";
    }
  }
  for (int t = n - 1; t >= 1; --t) {
    const std::int64_t c = spec.channels(t);
    const std::int64_t incoming = spec.uses_pyramid() ? incoming_branch_channels(spec, t) : 0;
    if (incoming > 0) {
      add_conv(p, level_name("proj", t), c, incoming, 1, true, seed);
    }
    add_conv(p, level_name("up", t), c, spec.channels(t + 1), 1, true, seed);
    if (spec.variant == Variant::MfpBica) {
      const auto block = bica_block_extent(t, n);
      register_bica_params(p, level_name("bica", t), c, bica_rows(spec.extent(t), block), seed);
    }
    const bool concat = spec.variant == Variant::Unet;
    add_block(p, level_name("dec", t), concat ? 2 * c : c, c, seed);

    w << "junction " << t << ": Q = up(" << (t + 1 == n ? "enc" : "dec") << t + 1 << "), O = enc" << t;
    if (incoming > 0) w << " + proj(concat(branches -> level " << t << "))";
    switch (spec.variant) {
      case Variant::Unet:
        w << ", dec" << t << "(concat(Q, O))";
        break;
      case Variant::MfpBica:
        w << ", dec" << t << "(Q + bica(O, Q)) with " << bica_block_extent(t, n) << "x" << bica_block_extent(t, n)
          << " blocks";
        break;
      default:
        w << ", dec" << t << "(Q + O)";
    }
    w << "\n";
  }
  add_conv(p, "head", spec.classes, spec.channels(1), 1, true, seed);
  w << "head: conv1x1 " << spec.channels(1) << " -> " << spec.classes << "\n";
  m.wiring = w.str();
  return m;
}

template <typename T>
Var<T> reuse_branch(const ModelSpec& spec, const Bound<T>& vars, const Var<T>& source, int level, int k) {
  if (level < 1 || level >= spec.levels || k < 0 || k > spec.levels - level) {
    throw ContractError("reuse branch (level " + std::to_string(level) + ", k " + std::to_string(k) +
                        ") outside 0 <= k <= " + std::to_string(spec.levels - level));
  }
  if (k == 0) return source;
  const auto name = branch_name(level, k);
  Conv2dOptions opt;
  opt.stride = 1 << k;
  opt.dilation = 1 << k;
  auto x = conv2d(source, lookup(vars, name + ".c.w"), opt);
  return relu(group_norm(x, lookup(vars, name + ".n.g"), lookup(vars, name + ".n.b"), group_count_for(x.dim(1))));
}

template <typename T>
std::vector<Var<T>> encode(const ModelSpec& spec, const Bound<T>& vars, const Var<T>& input, FeatureTaps<T>* taps) {
  const auto& s = input.shape();
  const std::int64_t unit = std::int64_t{1} << (spec.levels - 1);
  if (s.size() != 4 || s[1] != spec.input_channels) {
    throw ShapeError("encode: expected B x " + std::to_string(spec.input_channels) + " x H x W input, got " +
                     shape_str(s));
  }
  if (s[2] % unit != 0 || s[3] % unit != 0) {
    throw ShapeError("encode: spatial extents " + shape_str(s) + " not divisible by " + std::to_string(unit));
  }
  const int n = spec.levels;
  std::vector<Var<T>> feats;
  feats.push_back(conv_block(vars, "enc1", input));
  for (int i = 2; i < n; ++i) feats.push_back(conv_block(vars, level_name("enc", i), max_pool2x2(feats.back())));

  Var<T> bottom;
  if (spec.uses_pyramid()) {
    std::vector<Var<T>> parts;
    for (int src = 1; src < n; ++src) {
      if (n - src > spec.max_branch(src)) continue;
      auto b = reuse_branch(spec, vars, feats[static_cast<std::size_t>(src - 1)], src, n - src);
      if (taps) taps->branches[{src, n - src}] = b;
      parts.push_back(b);
    }
    bottom = parts.size() == 1 ? parts.front() : concat_channels(parts);
  } else {
    bottom = max_pool2x2(feats.back());
  }
  feats.push_back(conv_block(vars, level_name("enc", n), bottom));
  if (taps) taps->encoder = feats;
  return feats;
}

namespace {

template <typename T>
Var<T> up_join(const Bound<T>& vars, const Var<T>& state, const Var<T>& fused, int level, SkipJoin join) {
  const auto up = level_name("up", level);
  auto q = conv2d(upsample_bilinear(state, 2), lookup(vars, up + ".w"), lookup(vars, up + ".b"));
  if (join == SkipJoin::Concat) {
    if (q.dim(0) != fused.dim(0) || q.dim(2) != fused.dim(2) || q.dim(3) != fused.dim(3)) {
      throw ShapeError("decode_step: upsampled state " + shape_str(q.shape()) + " vs skip " +
                       shape_str(fused.shape()));
    }
    return concat_channels<T>({q, fused});
  }
  if (q.shape() != fused.shape()) {
    throw ShapeError("decode_step: upsampled state " + shape_str(q.shape()) + " vs skip " + shape_str(fused.shape()));
  }
  return add(q, fused);
}

template <typename T>
Var<T> junction_block(const ModelSpec& spec, const Bound<T>& vars, int level, const Var<T>& x) {
  return conv_block(vars, level == spec.levels ? level_name("enc", level) : level_name("dec", level), x);
}

}  // namespace

template <typename T>
Var<T> decode_step(const ModelSpec& spec, const Bound<T>& vars, const Var<T>& previous, const Var<T>& fused,
                   int level, SkipJoin join) {
  if (level < 1 || level >= spec.levels) throw ContractError("decode_step: junction level out of range");
  return up_join(vars, junction_block(spec, vars, level + 1, previous), fused, level, join);
}

template <typename T>
Var<T> forward(const ModelSpec& spec, const Bound<T>& vars, const Var<T>& input, FeatureTaps<T>* taps) {
  const int n = spec.levels;
  const auto feats = encode(spec, vars, input, taps);
  Var<T> state = feats.back();
  for (int t = n - 1; t >= 1; --t) {
    Var<T> o = feats[static_cast<std::size_t>(t - 1)];
    if (spec.uses_pyramid()) {
      std::vector<Var<T>> parts;
      for (int src = 1; src < t; ++src) {
        if (t - src > spec.max_branch(src)) continue;
        auto b = reuse_branch(spec, vars, feats[static_cast<std::size_t>(src - 1)], src, t - src);
        if (taps) taps->branches[{src, t - src}] = b;
        parts.push_back(b);
      }
      if (!parts.empty()) {
        const auto proj = level_name("proj", t);
        auto merged = parts.size() == 1 ? parts.front() : concat_channels(parts);
        o = add(o, conv2d(merged, lookup(vars, proj + ".w"), lookup(vars, proj + ".b")));
      }
    }
    Var<T> joined;
    if (spec.variant == Variant::MfpBica) {
      const auto up = level_name("up", t);
      auto q = conv2d(upsample_bilinear(state, 2), lookup(vars, up + ".w"), lookup(vars, up + ".b"));
      BicaLevelConfig cfg;
      cfg.block_h = cfg.block_w = bica_block_extent(t, n);
      cfg.mask = spec.mask_activation;
      auto fused = bica_fuse(o, q, bind_bica(vars, level_name("bica", t)), cfg);
      if (taps) {
        taps->bica_input[t] = o;
        taps->bica_output[t] = fused;
      }
      joined = add(q, fused);
    } else {
      joined = up_join(vars, state, o, t, spec.variant == Variant::Unet ? SkipJoin::Concat : SkipJoin::Sum);
    }
    if (taps) taps->decoder.push_back(joined);
    state = junction_block(spec, vars, t, joined);
  }
  if (taps) std::reverse(taps->decoder.begin(), taps->decoder.end());
  return conv2d(state, lookup(vars, "head.w"), lookup(vars, "head.b"));
}

#define MFP_INSTANTIATE(T)                                                                                     \
  template std::vector<Var<T>> encode(const ModelSpec&, const Bound<T>&, const Var<T>&, FeatureTaps<T>*);      \
  template Var<T> reuse_branch(const ModelSpec&, const Bound<T>&, const Var<T>&, int, int);                    \
  template Var<T> decode_step(const ModelSpec&, const Bound<T>&, const Var<T>&, const Var<T>&, int, SkipJoin); \
  template Var<T> forward(const ModelSpec&, const Bound<T>&, const Var<T>&, FeatureTaps<T>*);

MFP_INSTANTIATE(float)
MFP_INSTANTIATE(double)

#undef MFP_INSTANTIATE

}  // namespace mfp
