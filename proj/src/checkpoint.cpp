#include <bit>
#include <cmath>
#include <cstring>

#include "mfp/trainer.hpp"

// Layout, little-endian throughout:
//   "MFPC" u32 version
//   str model spec, str run config
//   u32 epoch, f64 best val dice, u32 best epoch, str rng state
//   f64 lr, f64 momentum, f64 weight decay
//   u32 count, then (str name, u32 rank, u32 dims[rank], f32 payload) per parameter
//   same again for the momentum buffers
//   str log
// where str is a u32 byte length followed by the bytes.

namespace mfp {
namespace {

class Writer {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    out.insert(out.end(), s.begin(), s.end());
  }
  void tensors(const ParameterSet<float>& set) {
    u32(static_cast<std::uint32_t>(set.size()));
    for (const auto& [name, t] : set) {
      str(name);
      u32(static_cast<std::uint32_t>(t.shape().size()));
      for (auto d : t.shape()) u32(static_cast<std::uint32_t>(d));
      for (float x : t.data()) f32(x);
    }
  }
  std::vector<std::uint8_t> out;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& b) : b_(b) {}

  std::uint32_t u32() {
    need(4, "u32");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b_[pos_ + static_cast<std::size_t>(i)]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8, "u64");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b_[pos_ + static_cast<std::size_t>(i)]) << (8 * i);
    pos_ += 8;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const auto n = u32();
    need(n, "string");
    std::string s(b_.begin() + static_cast<std::ptrdiff_t>(pos_), b_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return s;
  }
  ParameterSet<float> tensors() {
    ParameterSet<float> set;
    const auto count = u32();
    for (std::uint32_t i = 0; i < count; ++i) {
      const std::size_t at = pos_;
      std::string name = str();
      const auto rank = u32();
      if (rank == 0 || rank > 8) fail(at, "bad tensor rank " + std::to_string(rank));
      Shape shape;
      std::size_t n = 1;
      for (std::uint32_t r = 0; r < rank; ++r) {
        shape.push_back(u32());
        if (shape.back() == 0) fail(pos_ - 4, "zero tensor extent");
        n *= static_cast<std::size_t>(shape.back());
      }
      need(4 * n, "tensor payload for '" + name + "'");
      std::vector<float> data(n);
      for (auto& x : data) x = f32();
      if (set.contains(name)) fail(at, "duplicate tensor '" + name + "'");
      set.add(name, Tensor<float>(std::move(shape), std::move(data)));
    }
    return set;
  }
  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == b_.size(); }
  [[noreturn]] void fail(std::size_t at, const std::string& what) const {
    throw FormatError("checkpoint: " + what + " at byte offset " + std::to_string(at));
  }

 private:
  void need(std::size_t n, const std::string& what) const {
    if (b_.size() - pos_ < n) fail(pos_, "truncated " + what);
  }
  const std::vector<std::uint8_t>& b_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& c) {
  Writer w;
  w.out.insert(w.out.end(), {'M', 'F', 'P', 'C'});
  w.u32(kCheckpointVersion);
  w.str(c.spec.to_text());
  w.str(c.run_config);
  w.u32(static_cast<std::uint32_t>(c.epoch));
  w.f64(c.best_val_dice);
  w.u32(static_cast<std::uint32_t>(c.best_epoch));
  w.str(c.rng_state);
  w.f64(c.optim.lr);
  w.f64(c.optim.momentum);
  w.f64(c.optim.weight_decay);
  w.tensors(c.params);
  w.tensors(c.optim.velocity);
  w.str(c.log);
  return std::move(w.out);
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  if (bytes.size() < 4 || std::memcmp(bytes.data(), "MFPC", 4) != 0) r.fail(0, "bad magic");
  r.u32();  // magic
  const auto version = r.u32();
  if (version != kCheckpointVersion) r.fail(4, "unsupported version " + std::to_string(version));
  Checkpoint c;
  const auto spec_at = r.pos();
  const std::string spec_text = r.str();
  try {
    c.spec = ModelSpec::from_text(spec_text);
  } catch (const ConfigError& e) {
    r.fail(spec_at, std::string("bad model spec: ") + e.what());
  }
  c.run_config = r.str();
  c.epoch = static_cast<int>(r.u32());
  c.best_val_dice = r.f64();
  c.best_epoch = static_cast<int>(r.u32());
  c.rng_state = r.str();
  c.optim.lr = r.f64();
  c.optim.momentum = r.f64();
  c.optim.weight_decay = r.f64();
  c.params = r.tensors();
  c.optim.velocity = r.tensors();
  c.log = r.str();
  if (!r.done()) r.fail(r.pos(), "trailing bytes");
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) { write_file(path, encode_checkpoint(c)); }

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  try {
    return decode_checkpoint(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace mfp
