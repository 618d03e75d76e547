#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "hdl/data.hpp"

namespace fs = std::filesystem;
using hdl::Image;
using hdl::Rgb;
using hdl::Sample;
using hdl::ShapesConfig;
using hdl::Taxonomy;

namespace {

std::string fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p.string();
}

std::string read_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

bool same_rgb(Rgb a, Rgb b) { return a.r == b.r && a.g == b.g && a.b == b.b; }

Rgb pixel(const Image& img, int x, int y) {
  const std::size_t i = (static_cast<std::size_t>(y) * img.width + x) * 3;
  return {img.rgb[i], img.rgb[i + 1], img.rgb[i + 2]};
}

ShapesConfig tiny_config(std::uint64_t seed, int train = 72, int test = 24) {
  ShapesConfig cfg;
  cfg.image_size = 16;
  cfg.train_count = train;
  cfg.test_count = test;
  cfg.seed = seed;
  cfg.stratified = true;
  return cfg;
}

}  // namespace

TEST(Ppm, RoundTripPreservesBytes) {
  const std::string dir = fresh_dir("hdl_ppm_rt");
  Image img = Image::blank(5, 3, {1, 2, 3});
  img.set(4, 2, {250, 251, 252});
  img.set(0, 0, {9, 8, 7});
  const std::string path = dir + "/img.ppm";
  write_ppm(path, img);
  const Image back = hdl::read_ppm(path);
  EXPECT_EQ(back.width, 5);
  EXPECT_EQ(back.height, 3);
  EXPECT_EQ(back.rgb, img.rgb);
  fs::remove_all(dir);
}

TEST(Ppm, HeaderCommentsAreSkipped) {
  const std::string dir = fresh_dir("hdl_ppm_comment");
  const std::string path = dir + "/c.ppm";
  std::ofstream f(path, std::ios::binary);
  f << "P6 # format\n# a comment line\n2 1\n# another\n255\n";
  const unsigned char px[6] = {10, 20, 30, 40, 50, 60};
  f.write(reinterpret_cast<const char*>(px), 6);
  f.close();
  const Image img = hdl::read_ppm(path);
  EXPECT_EQ(img.width, 2);
  EXPECT_TRUE(same_rgb(pixel(img, 1, 0), Rgb{40, 50, 60}));
  fs::remove_all(dir);
}

TEST(Ppm, RejectsMalformedFiles) {
  const std::string dir = fresh_dir("hdl_ppm_bad");
  {
    std::ofstream f(dir + "/p5.ppm", std::ios::binary);
    f << "P5\n2 2\n255\n....";
  }
  EXPECT_THROW(hdl::read_ppm(dir + "/p5.ppm"), hdl::Error);
  {
    std::ofstream f(dir + "/short.ppm", std::ios::binary);
    f << "P6\n2 2\n255\nxyz";  // 3 of 12 payload bytes
  }
  EXPECT_THROW(hdl::read_ppm(dir + "/short.ppm"), hdl::Error);
  EXPECT_THROW(hdl::read_ppm(dir + "/absent.ppm"), hdl::Error);
  fs::remove_all(dir);
}

TEST(Render, SquareHasBorderRingAndFilledCore) {
  const Rgb fill{25, 180, 25}, border{245, 140, 20};
  // 16x16 canvas, square at (2,3) size 10, border thickness 2.
  const Image img = hdl::render_shape(16, 1, fill, border, 2, 3, 10, 2);
  EXPECT_TRUE(same_rgb(pixel(img, 0, 0), hdl::kBackground));   // outside
  EXPECT_TRUE(same_rgb(pixel(img, 2, 3), border));             // corner
  EXPECT_TRUE(same_rgb(pixel(img, 3, 4), border));             // second ring
  EXPECT_TRUE(same_rgb(pixel(img, 4, 5), fill));               // first interior
  EXPECT_TRUE(same_rgb(pixel(img, 7, 8), fill));               // center
  EXPECT_TRUE(same_rgb(pixel(img, 11, 12), border));           // far corner inside
  EXPECT_TRUE(same_rgb(pixel(img, 12, 13), hdl::kBackground)); // just past the square
  // Border ring is exactly 2 px on each side along the middle row.
  const int y = 3 + 5;
  int run = 0;
  while (same_rgb(pixel(img, 2 + run, y), border)) ++run;
  EXPECT_EQ(run, 2);
}

TEST(Render, TriangleApexBorderAndCentroidFill) {
  const Rgb fill{230, 25, 25}, border{25, 25, 230};
  const int size = 64, sz = 48, px = 8, py = 8;
  const Image img = hdl::render_shape(size, 0, fill, border, px, py, sz, 3);
  EXPECT_TRUE(same_rgb(pixel(img, 0, 0), hdl::kBackground));
  EXPECT_TRUE(same_rgb(pixel(img, px, py), hdl::kBackground));      // bbox corner, outside tri
  EXPECT_TRUE(same_rgb(pixel(img, px + sz - 1, py), hdl::kBackground));
  const int apex_x = px + (sz - 1) / 2;
  EXPECT_TRUE(same_rgb(pixel(img, apex_x, py + 1), border));        // near apex
  const int cx = px + (sz - 1) / 2, cy = py + 2 * sz / 3;
  EXPECT_TRUE(same_rgb(pixel(img, cx, cy), fill));                  // centroid region
  EXPECT_TRUE(same_rgb(pixel(img, cx, py + sz - 1), border));       // base edge
}

TEST(Render, EveryPixelIsPaletteOrBackground) {
  const Rgb fill{235, 235, 30}, border{128, 128, 128};
  for (int shape = 0; shape < 2; ++shape) {
    const Image img = hdl::render_shape(32, shape, fill, border, 5, 7, 20, 2);
    int fills = 0, borders = 0, bgs = 0;
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x) {
        const Rgb p = pixel(img, x, y);
        if (same_rgb(p, fill)) ++fills;
        else if (same_rgb(p, border)) ++borders;
        else if (same_rgb(p, hdl::kBackground)) ++bgs;
        else FAIL() << "unexpected color at " << x << "," << y;
      }
    EXPECT_GT(fills, 0) << "shape " << shape;
    EXPECT_GT(borders, 0) << "shape " << shape;
    EXPECT_GT(bgs, 0) << "shape " << shape;
  }
}

TEST(Generate, RegenerationIsByteIdentical) {
  const ShapesConfig cfg = tiny_config(7, 20, 8);
  const std::string d1 = fresh_dir("hdl_gen_a"), d2 = fresh_dir("hdl_gen_b");
  generate_shapes(cfg, d1);
  generate_shapes(cfg, d2);
  EXPECT_EQ(read_bytes(d1 + "/taxonomy.txt"), read_bytes(d2 + "/taxonomy.txt"));
  EXPECT_EQ(read_bytes(d1 + "/train_manifest.csv"), read_bytes(d2 + "/train_manifest.csv"));
  EXPECT_EQ(read_bytes(d1 + "/test_manifest.csv"), read_bytes(d2 + "/test_manifest.csv"));
  for (const char* name : {"images/train_000000.ppm", "images/train_000019.ppm",
                           "images/test_000003.ppm"})
    EXPECT_EQ(read_bytes(d1 + "/" + name), read_bytes(d2 + "/" + name)) << name;
  fs::remove_all(d1);
  fs::remove_all(d2);
}

TEST(Generate, DifferentSeedsDifferentImages) {
  const std::string d1 = fresh_dir("hdl_gen_s1"), d2 = fresh_dir("hdl_gen_s2");
  generate_shapes(tiny_config(1, 6, 2), d1);
  generate_shapes(tiny_config(2, 6, 2), d2);
  bool any_diff = false;
  for (int i = 0; i < 6 && !any_diff; ++i) {
    char name[64];
    std::snprintf(name, sizeof(name), "/images/train_%06d.ppm", i);
    any_diff = read_bytes(d1 + name) != read_bytes(d2 + name);
  }
  EXPECT_TRUE(any_diff);
  fs::remove_all(d1);
  fs::remove_all(d2);
}

TEST(Generate, StratifiedCoversAll72ConfigurationsUniformly) {
  const ShapesConfig cfg = tiny_config(3, 144, 72);
  const std::string dir = fresh_dir("hdl_gen_strat");
  generate_shapes(cfg, dir);
  const Taxonomy tax = Taxonomy::load(dir + "/taxonomy.txt");
  const std::vector<Sample> train = hdl::load_dataset(dir + "/train_manifest.csv", tax);
  ASSERT_EQ(train.size(), 144u);

  std::map<hdl::LabelPath, int> counts;
  std::vector<std::map<std::int64_t, int>> marginals(3);
  for (const auto& s : train) {
    counts[s.labels]++;
    for (int l = 0; l < 3; ++l) marginals[l][s.labels[l]]++;
  }
  EXPECT_EQ(counts.size(), 72u);
  for (const auto& [path, n] : counts) EXPECT_EQ(n, 2);  // 144 = 2 per configuration
  for (std::int64_t c = 0; c < 6; ++c) {
    EXPECT_EQ(marginals[0][c], 24);
    EXPECT_EQ(marginals[1][c], 24);
  }
  EXPECT_EQ(marginals[2][0], 72);
  EXPECT_EQ(marginals[2][1], 72);
  fs::remove_all(dir);
}

TEST(Generate, GroundTruthLabelsNeverViolateHierarchy) {
  ShapesConfig cfg = tiny_config(11, 50, 20);
  cfg.stratified = false;
  const std::string dir = fresh_dir("hdl_gen_truth");
  generate_shapes(cfg, dir);
  const Taxonomy tax = Taxonomy::load(dir + "/taxonomy.txt");
  EXPECT_EQ(tax.count_valid_paths(), 72u);
  for (const char* split : {"/train_manifest.csv", "/test_manifest.csv"}) {
    const std::vector<Sample> samples = hdl::load_dataset(dir + split, tax);
    std::vector<hdl::LabelPath> labels;
    for (const auto& s : samples) labels.push_back(s.labels);
    EXPECT_EQ(violation_rate(tax, labels), 0.0) << split;
  }
  fs::remove_all(dir);
}

TEST(Generate, RejectsDegenerateConfigs) {
  ShapesConfig cfg = tiny_config(0);
  cfg.min_scale = 0.9;
  cfg.max_scale = 0.5;
  EXPECT_THROW(generate_shapes(cfg, fresh_dir("hdl_gen_bad")), hdl::Error);
  ShapesConfig cfg2 = tiny_config(0);
  cfg2.train_count = 0;
  EXPECT_THROW(generate_shapes(cfg2, fresh_dir("hdl_gen_bad")), hdl::Error);
}

TEST(Generate, SampleSpecDependsOnlyOnSeedAndIndex) {
  const ShapesConfig cfg = tiny_config(5);
  const hdl::SampleSpec a = hdl::draw_sample_spec(cfg, 9);
  const hdl::SampleSpec b = hdl::draw_sample_spec(cfg, 9);
  EXPECT_EQ(a.fill, b.fill);
  EXPECT_EQ(a.px, b.px);
  EXPECT_EQ(a.sz, b.sz);
  EXPECT_EQ(a.scale, b.scale);
  // Shapes stay fully in frame at the configured scale bounds.
  for (std::uint64_t i = 0; i < 200; ++i) {
    const hdl::SampleSpec s = hdl::draw_sample_spec(cfg, i);
    EXPECT_GE(s.px, 0);
    EXPECT_GE(s.py, 0);
    EXPECT_LE(s.px + s.sz, cfg.image_size);
    EXPECT_LE(s.py + s.sz, cfg.image_size);
  }
}

TEST(Load, MissingImageFileErrorNamesThePath) {
  const ShapesConfig cfg = tiny_config(4, 5, 2);
  const std::string dir = fresh_dir("hdl_load_missing");
  generate_shapes(cfg, dir);
  fs::remove(dir + "/images/train_000002.ppm");
  const Taxonomy tax = Taxonomy::load(dir + "/taxonomy.txt");
  try {
    hdl::load_dataset(dir + "/train_manifest.csv", tax);
    FAIL() << "expected an error";
  } catch (const hdl::Error& e) {
    EXPECT_NE(std::string(e.what()).find("train_000002.ppm"), std::string::npos) << e.what();
  }
  fs::remove_all(dir);
}

TEST(Load, RejectsWrongHeaderAndUnknownLabels) {
  const std::string dir = fresh_dir("hdl_load_bad");
  const Taxonomy tax = Taxonomy::parse(hdl::shapes_taxonomy_text());
  {
    std::ofstream f(dir + "/m1.csv");
    f << "file,a,b,c\n";
  }
  EXPECT_THROW(hdl::load_dataset(dir + "/m1.csv", tax), hdl::Error);
  {
    write_ppm(dir + "/img.ppm", Image::blank(4, 4, hdl::kBackground));
    std::ofstream f(dir + "/m2.csv");
    f << "path,label_level1,label_level2,label_level3\nimg.ppm,red,green,pentagon\n";
  }
  EXPECT_THROW(hdl::load_dataset(dir + "/m2.csv", tax), hdl::Error);
  {
    std::ofstream f(dir + "/m3.csv");
    f << "path,label_level1,label_level2,label_level3\n";
  }
  EXPECT_THROW(hdl::load_dataset(dir + "/m3.csv", tax), hdl::Error);  // no samples
  fs::remove_all(dir);
}

TEST(Batch, EpochOrderPartitionsAllSamples) {
  hdl::Rng rng(99);
  const auto batches = hdl::epoch_order(10, 4, rng);
  ASSERT_EQ(batches.size(), 3u);
  EXPECT_EQ(batches[0].size(), 4u);
  EXPECT_EQ(batches[1].size(), 4u);
  EXPECT_EQ(batches[2].size(), 2u);  // short final batch kept
  std::multiset<std::size_t> seen;
  for (const auto& b : batches) seen.insert(b.begin(), b.end());
  std::multiset<std::size_t> want;
  for (std::size_t i = 0; i < 10; ++i) want.insert(i);
  EXPECT_EQ(seen, want);
}

TEST(Batch, UnshuffledOrderIsSequential) {
  hdl::Rng rng(1);
  const auto batches = hdl::epoch_order(5, 2, rng, /*shuffle=*/false);
  EXPECT_EQ(batches[0], (std::vector<std::size_t>{0, 1}));
  EXPECT_EQ(batches[2], (std::vector<std::size_t>{4}));
}

TEST(Batch, AssemblyScalesPixelsTo01) {
  Sample s1, s2;
  s1.id = "a";
  s1.image = Image::blank(2, 2, {255, 0, 128});
  s1.labels = {0, 1};
  s2.id = "b";
  s2.image = Image::blank(2, 2, {10, 20, 30});
  s2.labels = {1, 0};
  const hdl::Batch batch = hdl::assemble_batch({s1, s2}, {0, 1});
  EXPECT_EQ(batch.images.shape, (hdl::Shape{2, 3, 2, 2}));
  EXPECT_FLOAT_EQ(batch.images.data[0], 1.0f);                  // sample 0, R plane
  EXPECT_FLOAT_EQ(batch.images.data[4], 0.0f);                  // sample 0, G plane
  EXPECT_FLOAT_EQ(batch.images.data[8], 128.0f / 255.0f);       // sample 0, B plane
  EXPECT_FLOAT_EQ(batch.images.data[12], 10.0f / 255.0f);       // sample 1, R plane
  EXPECT_EQ(batch.labels[0], (std::vector<std::int64_t>{0, 1}));
  EXPECT_EQ(batch.labels[1], (std::vector<std::int64_t>{1, 0}));
}

TEST(Batch, SampleToTensorMatchesAssembly) {
  Sample s;
  s.id = "x";
  s.image = Image::blank(3, 2, {100, 150, 200});
  s.image.set(1, 0, {1, 2, 3});
  s.labels = {0};
  const hdl::Tensor<float> t = s.to_tensor();
  EXPECT_EQ(t.shape, (hdl::Shape{3, 2, 3}));
  const hdl::Batch batch = hdl::assemble_batch({s}, {0});
  for (std::size_t i = 0; i < t.data.size(); ++i) EXPECT_EQ(t.data[i], batch.images.data[i]);
}
