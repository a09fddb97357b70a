#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <cstring>
#include <set>

#include "mfp/augment.hpp"
#include "mfp/dataset.hpp"
#include "mfp/phantom.hpp"
#include "mfp/segvol.hpp"

using namespace mfp;

namespace {

Slice ramp_slice(std::int64_t size, bool rows) {
  Slice s;
  s.size = size;
  for (std::int64_t y = 0; y < size; ++y)
    for (std::int64_t x = 0; x < size; ++x) {
      const auto v = rows ? y : x;
      s.image.push_back(static_cast<float>(v));
      s.labels.push_back(static_cast<std::uint8_t>(v));
    }
  return s;
}

}  // namespace

TEST(Phantom, DeterministicAndComplete) {
  PhantomSpec spec;
  spec.seed = 42;
  const auto a = generate_phantom(spec);
  const auto b = generate_phantom(spec);
  EXPECT_TRUE(a.image == b.image);
  EXPECT_TRUE(a.labels == b.labels);
  std::set<int> ids(a.labels.voxels.begin(), a.labels.voxels.end());
  EXPECT_EQ(ids, (std::set<int>{0, 1, 2, 3, 4, 5}));
  for (float v : a.image.voxels) {
    ASSERT_GE(v, 0.0f);
    ASSERT_LE(v, 1.0f);
  }
  spec.seed = 43;
  EXPECT_FALSE(generate_phantom(spec).labels == a.labels);
}

TEST(Phantom, AnalCanalAndRectumDisjoint) {
  // Rasterise both ellipsoids independently: no voxel labelled anal canal may
  // lie inside the rectum, which has priority, and each label stays inside
  // its own ellipsoid.
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    PhantomSpec spec;
    spec.seed = seed;
    const auto p = generate_phantom(spec);
    const auto organs = jittered_organs(spec);
    auto in = [&](int id, std::int64_t z, std::int64_t y, std::int64_t x) {
      const std::array<std::int64_t, 3> idx{z, y, x};
      double s = 0;
      for (std::size_t a = 0; a < 3; ++a) {
        const double c = -1.0 + 2.0 * (static_cast<double>(idx[a]) + 0.5) / static_cast<double>(spec.dims[a]);
        const double d = (c - organs[static_cast<std::size_t>(id - 1)].center[a]) / organs[static_cast<std::size_t>(id - 1)].radius[a];
        s += d * d;
      }
      return s <= 1.0;
    };
    long canal = 0, rectum = 0, overlap = 0;
    for (std::int64_t z = 0; z < spec.dims[0]; ++z)
      for (std::int64_t y = 0; y < spec.dims[1]; ++y)
        for (std::int64_t x = 0; x < spec.dims[2]; ++x) {
          const int l = p.labels.at(z, y, x);
          canal += l == 1;
          rectum += l == 3;
          if (l == 1 && in(3, z, y, x)) ++overlap;
          if (l == 1 || l == 3) {
            ASSERT_TRUE(in(l, z, y, x));
          }
        }
    EXPECT_GT(canal, 0);
    EXPECT_GT(rectum, 0);
    EXPECT_EQ(overlap, 0);
  }
}

TEST(Phantom, TooSmallIsConfigError) {
  PhantomSpec spec;
  spec.dims = {8, 64, 64};
  EXPECT_THROW(generate_phantom(spec), ConfigError);
}

TEST(Phantom, Throughput) {
  PhantomSpec spec;
  spec.dims = {16, 128, 128};
  const auto t0 = std::chrono::steady_clock::now();
  generate_phantom(spec);
  EXPECT_LT(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(), 1.0);
}

TEST(Augment, ZeroProbabilitiesAreIdentity) {
  PhantomSpec spec;
  const auto p = generate_phantom(spec);
  CaseData c{"x", p.image, p.labels};
  const Slice s = axial_slice(c, 8);
  Rng rng(1);
  const Slice out = augment(s, rng, AugmentConfig::identity());
  EXPECT_EQ(out.image, s.image);
  EXPECT_EQ(out.labels, s.labels);
}

TEST(Augment, DrawConsumesFixedAmount) {
  AugmentConfig on;
  on.flip_prob = 0.5;
  Rng a(5), b(5);
  draw_augmentation(a, on);
  draw_augmentation(b, AugmentConfig::identity());
  EXPECT_TRUE(a == b);
}

TEST(Augment, FlipIsAnInvolution) {
  AugmentDraw d;
  d.angle_deg = 3.0;
  const auto t = make_transform(16, d, 4);
  const auto back = flip_horizontal(flip_horizontal(t));
  ASSERT_EQ(back.sx.size(), t.sx.size());
  for (std::size_t i = 0; i < t.sx.size(); ++i) {
    EXPECT_EQ(back.sy[i], t.sy[i]);
    EXPECT_NEAR(back.sx[i], t.sx[i], 1e-12);  // (n-1) - ((n-1) - x) rounds
  }

  AugmentDraw f;
  f.flip = true;
  const auto ft = make_transform(8, f, 4);
  std::vector<float> img(64);
  for (std::size_t i = 0; i < 64; ++i) img[i] = static_cast<float>(i);
  EXPECT_EQ(warp_image(warp_image(img, ft), ft), img);
}

TEST(Augment, MaxRotationKeepsLabelSet) {
  PhantomSpec spec;
  const auto p = generate_phantom(spec);
  CaseData c{"x", p.image, p.labels};
  for (std::int64_t z : {2, 8, 13}) {
    const Slice s = axial_slice(c, z);
    for (double angle : {-5.0, 5.0}) {
      AugmentDraw d;
      d.angle_deg = angle;
      const auto labels = warp_labels(s.labels, make_transform(s.size, d, 4));
      const std::set<int> before(s.labels.begin(), s.labels.end()), after(labels.begin(), labels.end());
      for (int v : after) EXPECT_TRUE(before.count(v)) << v;
    }
  }
}

TEST(Augment, ImageAndLabelsShareOneTransform) {
  AugmentConfig cfg;
  cfg.contrast_prob = 0.0;
  cfg.elastic_prob = 1.0;
  cfg.flip_prob = 0.5;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    for (bool rows : {true, false}) {
      Rng rng(seed);
      const Slice out = augment(ramp_slice(32, rows), rng, cfg);
      for (std::size_t i = 0; i < out.image.size(); ++i) {
        ASSERT_LE(std::abs(out.image[i] - out.labels[i]), 0.5f + 1e-4f) << "pixel " << i;
      }
    }
  }
}

TEST(Normalize, MomentsConstantAndIdempotent) {
  Rng rng(3);
  std::vector<float> v(4096);
  for (auto& x : v) x = static_cast<float>(rng.uniform(2.0, 9.0));
  normalize(v);
  double m = 0, s = 0;
  for (float x : v) m += x;
  m /= static_cast<double>(v.size());
  for (float x : v) s += (x - m) * (x - m);
  s /= static_cast<double>(v.size());
  EXPECT_NEAR(m, 0.0, 1e-6);
  EXPECT_NEAR(s, 1.0, 1e-4);
  auto twice = v;
  normalize(twice);
  for (std::size_t i = 0; i < v.size(); ++i) ASSERT_NEAR(twice[i], v[i], 1e-6);
  std::vector<float> flat(100, 0.3f);
  normalize(flat);
  for (float x : flat) EXPECT_EQ(x, 0.0f);
}

TEST(SegVol, RoundTripsBitExactly) {
  Rng rng(7);
  ImageVolume img({3, 5, 4}, {2.5f, 0.7f, 0.7f});
  for (auto& v : img.voxels) v = static_cast<float>(rng.normal());
  img.voxels[0] = -0.0f;
  const auto back = decode_segvol(encode_segvol(img));
  ASSERT_EQ(back.dtype, SegVolDtype::F32);
  EXPECT_EQ(std::memcmp(back.image.voxels.data(), img.voxels.data(), 4 * img.voxels.size()), 0);
  EXPECT_EQ(back.image.spacing, img.spacing);
  LabelVolume lab({2, 2, 2}, {1, 1, 1});
  lab.voxels = {0, 1, 2, 3, 4, 5, 0, 1};
  EXPECT_TRUE(decode_segvol(encode_segvol(lab)).labels == lab);
  const auto bytes = encode_segvol(lab);
  EXPECT_EQ(bytes.size(), kSegVolHeaderSize + 8);
  EXPECT_EQ(bytes[30], 1);
  EXPECT_EQ(bytes[6], 2);  // D, little-endian
}

TEST(SegVol, RejectsMalformedFiles) {
  LabelVolume lab({4, 4, 4}, {1, 1, 1});
  auto bytes = encode_segvol(lab);
  auto bad = bytes;
  std::copy_n("XXXX", 4, bad.begin());
  try {
    decode_segvol(bad);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("magic"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("offset 0"), std::string::npos);
  }
  bad = bytes;
  bad.pop_back();  // 63 payload bytes for 4x4x4
  try {
    decode_segvol(bad);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("truncated"), std::string::npos);
  }
  bad = bytes;
  bad[30] = 7;
  try {
    decode_segvol(bad);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("offset 30"), std::string::npos);
  }
  EXPECT_THROW(read_segvol("/nonexistent/file.svol"), IoError);
}

TEST(Split, PartitionsWithDefaultProportions) {
  for (int n : {12, 20, 55, 83}) {
    std::vector<std::string> ids;
    for (int i = 0; i < n; ++i) ids.push_back(case_id(i));
    const auto m = make_split(ids, 9);
    std::set<std::string> all;
    for (const auto* part : {&m.train, &m.val, &m.test}) all.insert(part->begin(), part->end());
    EXPECT_EQ(all.size(), static_cast<std::size_t>(n));
    EXPECT_EQ(m.train.size() + m.val.size() + m.test.size(), static_cast<std::size_t>(n));
    EXPECT_LE(std::abs(static_cast<double>(m.train.size()) - 0.66 * n), 1.0);
    EXPECT_LE(std::abs(static_cast<double>(m.val.size()) - 0.11 * n), 1.0);
    EXPECT_LE(std::abs(static_cast<double>(m.test.size()) - 0.23 * n), 1.0);
    const auto parsed = SplitManifest::parse(m.to_text());
    EXPECT_EQ(parsed.train, m.train);
    EXPECT_EQ(parsed.test, m.test);
  }
  EXPECT_THROW(SplitManifest::parse("split,case_id\ntrain,a\ntest,a\n"), FormatError);
  EXPECT_THROW(SplitManifest::parse("holdout,a\n"), FormatError);
}
