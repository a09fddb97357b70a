#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <string>
#include <sys/wait.h>

#include "mfp/heatmap.hpp"
#include "mfp/segvol.hpp"

using namespace mfp;
namespace fs = std::filesystem;

namespace {

struct RunResult {
  int code = -1;
  std::string out;
};

RunResult run(const std::string& args) {
  const std::string cmd = std::string(MFPNET_PATH) + " " + args + " 2>&1";
  RunResult r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  char buf[4096];
  std::size_t n;
  while ((n = fread(buf, 1, sizeof buf, pipe)) > 0) r.out.append(buf, n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("mfp_cli_test_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST(Heatmap, ConstantMapIsMidGrey) {
  const std::vector<float> flat(12, 3.5f);
  for (auto v : heatmap_pixels(flat)) EXPECT_EQ(v, 128);
}

TEST(Heatmap, EndpointsAndRounding) {
  const std::vector<float> m{-2.0f, 0.0f, 2.0f, 1.0f};
  const auto px = heatmap_pixels(m);
  EXPECT_EQ(px[0], 0);
  EXPECT_EQ(px[2], 255);
  EXPECT_EQ(px[1], 128);  // 127.5 rounds away from zero
  EXPECT_EQ(px[3], 191);  // 191.25
}

TEST(Heatmap, PgmRoundTripAndErrors) {
  PgmImage img{3, 2, 255, {0, 1, 2, 253, 254, 255}};
  const auto bytes = encode_pgm(img);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 11), "P5\n3 2\n255\n");
  const auto back = decode_pgm(bytes);
  EXPECT_EQ(back.width, 3);
  EXPECT_EQ(back.height, 2);
  EXPECT_EQ(back.pixels, img.pixels);
  auto bad = bytes;
  bad[1] = '2';
  EXPECT_THROW(decode_pgm(bad), FormatError);
  bad = bytes;
  bad.pop_back();
  EXPECT_THROW(decode_pgm(bad), FormatError);
}

TEST(Heatmap, ExportWritesPgm) {
  const auto path = scratch("map.pgm");
  Tensor<float> map({1, 1, 4, 5});
  for (std::size_t i = 0; i < map.numel(); ++i) map[i] = static_cast<float>(i);
  export_heatmap(map, path);
  const auto img = decode_pgm(read_file(path));
  EXPECT_EQ(img.width, 5);
  EXPECT_EQ(img.height, 4);
  EXPECT_EQ(img.pixels.front(), 0);
  EXPECT_EQ(img.pixels.back(), 255);
  EXPECT_THROW(export_heatmap(Tensor<float>({2, 3, 4}), path), ShapeError);
  fs::remove(path);
}

TEST(Cli, HelpListsSubcommands) {
  const auto r = run("--help");
  EXPECT_EQ(r.code, 0);
  for (const char* sub : {"gen-data", "train", "eval", "infer", "gradcheck", "heatmap"}) {
    EXPECT_NE(r.out.find(sub), std::string::npos) << sub;
  }
}

TEST(Cli, GenDataWritesCasesAndManifest) {
  const auto dir = scratch("data");
  const auto r = run("gen-data --cases 4 --dims 16x32x32 --seed 5 --out " + dir.string());
  ASSERT_EQ(r.code, 0) << r.out;
  int files = 0;
  for (const auto& e : fs::directory_iterator(dir)) files += e.path().extension() == ".svol";
  EXPECT_EQ(files, 8);
  const auto m = SplitManifest::parse(read_text(dir / "split.csv"));
  EXPECT_EQ(m.train.size() + m.val.size() + m.test.size(), 4u);
  fs::remove_all(dir);
}

TEST(Cli, ExitCodes) {
  EXPECT_EQ(run("train --dry-run --set no_such_key=1").code, 1);
  EXPECT_EQ(run("eval --checkpoint /nonexistent/x.ckpt --data /nonexistent").code, 2);
  EXPECT_EQ(run("frobnicate").code, 1);
}

TEST(Cli, FullScaleDryRunEchoesRecipe) {
  const auto r = run("train --dry-run --paper-config");
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("batch_size=32"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("epochs=400"), std::string::npos);
  EXPECT_NE(r.out.find("image_size=256"), std::string::npos);
  EXPECT_NE(r.out.find("0:0.01,200:0.001,300:0.0001"), std::string::npos);
}
