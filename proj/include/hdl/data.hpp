#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "hdl/random.hpp"
#include "hdl/taxonomy.hpp"
#include "hdl/tensor.hpp"

namespace hdl {

struct Rgb {
  std::uint8_t r, g, b;
};

// The six shared fill/border colors. Index order defines class index order in
// the emitted taxonomy, so these constants are part of the dataset contract.
struct PaletteEntry {
  const char* name;
  Rgb color;
};
inline constexpr std::array<PaletteEntry, 6> kPalette{{
    {"red", {230, 25, 25}},
    {"green", {25, 180, 25}},
    {"blue", {25, 25, 230}},
    {"yellow", {235, 235, 30}},
    {"gray", {128, 128, 128}},
    {"orange", {245, 140, 20}},
}};
inline constexpr std::array<const char*, 2> kShapeNames{"triangle", "square"};
inline constexpr Rgb kBackground{255, 255, 255};

struct Image {
  int width = 0, height = 0;
  std::vector<std::uint8_t> rgb;  // row-major, 3 bytes per pixel

  static Image blank(int w, int h, Rgb c) {
    Image img;
    img.width = w;
    img.height = h;
    img.rgb.resize(static_cast<std::size_t>(w) * h * 3);
    for (std::size_t i = 0; i < img.rgb.size(); i += 3) {
      img.rgb[i] = c.r;
      img.rgb[i + 1] = c.g;
      img.rgb[i + 2] = c.b;
    }
    return img;
  }

  void set(int x, int y, Rgb c) {
    const std::size_t i = (static_cast<std::size_t>(y) * width + x) * 3;
    rgb[i] = c.r;
    rgb[i + 1] = c.g;
    rgb[i + 2] = c.b;
  }
};

// ---------------------------------------------------------------------------
// PPM (P6, maxval 255)
// ---------------------------------------------------------------------------

inline void write_ppm(const std::string& path, const Image& img) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  HDL_CHECK(f.good(), "cannot open ", path, " for writing");
  f << "P6\n" << img.width << " " << img.height << "\n255\n";
  f.write(reinterpret_cast<const char*>(img.rgb.data()),
          static_cast<std::streamsize>(img.rgb.size()));
  HDL_CHECK(f.good(), "write failed for ", path);
}

inline Image read_ppm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  HDL_CHECK(f.good(), "cannot open image file ", path);
  auto next_token = [&]() {
    std::string tok;
    int c;
    while ((c = f.get()) != EOF) {
      if (c == '#') {  // comment to end of line
        while ((c = f.get()) != EOF && c != '\n') {
        }
        continue;
      }
      if (std::isspace(c)) {
        if (!tok.empty()) break;
        continue;
      }
      tok.push_back(static_cast<char>(c));
    }
    HDL_CHECK(!tok.empty(), "malformed PPM header in ", path);
    return tok;
  };
  HDL_CHECK(next_token() == "P6", "unsupported image format in ", path, " (expected P6)");
  Image img;
  img.width = std::stoi(next_token());
  img.height = std::stoi(next_token());
  const int maxval = std::stoi(next_token());
  HDL_CHECK(img.width > 0 && img.height > 0, "bad dimensions in ", path);
  HDL_CHECK(maxval == 255, "unsupported maxval ", maxval, " in ", path);
  img.rgb.resize(static_cast<std::size_t>(img.width) * img.height * 3);
  f.read(reinterpret_cast<char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
  HDL_CHECK(f.gcount() == static_cast<std::streamsize>(img.rgb.size()),
            "truncated pixel data in ", path);
  return img;
}

// ---------------------------------------------------------------------------
// Rasterizer
// ---------------------------------------------------------------------------

namespace detail {

// Distance from point p to the inside of the line through a->b, positive on
// the side where `inside_ref` lies. Used for triangle edge distances.
inline double side_distance(double px, double py, double ax, double ay, double bx, double by,
                            double rx, double ry) {
  const double nx = by - ay, ny = ax - bx;  // normal of the edge
  const double len = std::sqrt(nx * nx + ny * ny);
  double d = ((px - ax) * nx + (py - ay) * ny) / len;
  const double dr = ((rx - ax) * nx + (ry - ay) * ny) / len;
  return dr < 0 ? -d : d;
}

}  // namespace detail

// Draws one shape onto a white canvas: solid fill interior with a border ring
// of the given thickness. Squares use Chebyshev distance to the rectangle
// edge; triangles (apex top-center, flat base) use exact point-to-edge
// distances.
inline Image render_shape(int image_size, int shape, Rgb fill, Rgb border, int px, int py, int sz,
                          int thickness) {
  Image img = Image::blank(image_size, image_size, kBackground);
  if (shape == 1) {  // square
    for (int y = py; y < py + sz; ++y)
      for (int x = px; x < px + sz; ++x) {
        const int edge = std::min(std::min(x - px, px + sz - 1 - x), std::min(y - py, py + sz - 1 - y));
        img.set(x, y, edge < thickness ? border : fill);
      }
  } else {  // triangle
    const double ax = px + (sz - 1) / 2.0, ay = py;            // apex
    const double bx = px, by = py + sz - 1;                    // base left
    const double cx = px + sz - 1, cy = py + sz - 1;           // base right
    const double gx = (ax + bx + cx) / 3.0, gy = (ay + by + cy) / 3.0;
    for (int y = py; y < py + sz; ++y)
      for (int x = px; x < px + sz; ++x) {
        const double d1 = detail::side_distance(x, y, ax, ay, bx, by, gx, gy);
        const double d2 = detail::side_distance(x, y, ax, ay, cx, cy, gx, gy);
        const double d3 = detail::side_distance(x, y, bx, by, cx, cy, gx, gy);
        const double dmin = std::min(std::min(d1, d2), d3);
        if (dmin < -1e-9) continue;  // outside
        img.set(x, y, dmin < thickness ? border : fill);
      }
  }
  return img;
}

// ---------------------------------------------------------------------------
// Dataset generation
// ---------------------------------------------------------------------------

struct ShapesConfig {
  int image_size = 128;
  int train_count = 20000;
  int test_count = 6000;
  std::uint64_t seed = 0;
  int border_thickness = 0;  // 0 = derived: max(2, image_size/16)
  double min_scale = 0.4;
  double max_scale = 0.8;
  bool stratified = false;

  int thickness() const {
    return border_thickness > 0 ? border_thickness : std::max(2, image_size / 16);
  }
};

// The emitted hierarchy lists levels widest-first (fill, border, shape), the
// same wide-to-narrow layout used for the animal taxonomy (family, species,
// class): the few-class level sits at the end of the cascade. Every
// (fill, border, shape) combination is a valid path: 6*6*2 = 72.
inline std::string shapes_taxonomy_text() {
  std::ostringstream os;
  os << "# Synthetic shapes hierarchy: 6 fill colors x 6 border colors x 2 shapes.\n";
  os << "level fill:";
  for (std::size_t i = 0; i < kPalette.size(); ++i) os << (i ? "," : " ") << kPalette[i].name;
  os << "\nlevel border:";
  for (std::size_t i = 0; i < kPalette.size(); ++i) os << (i ? "," : " ") << kPalette[i].name;
  os << "\nlevel shape: " << kShapeNames[0] << "," << kShapeNames[1] << "\n";
  for (const auto& f : kPalette)
    for (const auto& b : kPalette) os << "edge " << f.name << " -> " << b.name << "\n";
  for (const auto& b : kPalette)
    for (const auto& s : kShapeNames) os << "edge " << b.name << " -> " << s << "\n";
  return os.str();
}

struct SampleSpec {
  int fill, border, shape;  // class indices per level (fill, border, shape)
  double scale;
  int px, py, sz;
};

// Per-sample draw, fully determined by (seed, global sample index); the
// stream derivation makes generation order irrelevant.
inline SampleSpec draw_sample_spec(const ShapesConfig& cfg, std::uint64_t global_index) {
  Rng rng(stream_seed(cfg.seed, global_index));
  SampleSpec s{};
  if (cfg.stratified) {
    const int c = static_cast<int>(global_index % 72);
    s.fill = c % 6;
    s.border = (c / 6) % 6;
    s.shape = c / 36;
  } else {
    s.fill = static_cast<int>(rng.uniform_int(6));
    s.border = static_cast<int>(rng.uniform_int(6));
    s.shape = static_cast<int>(rng.uniform_int(2));
  }
  s.scale = rng.uniform(cfg.min_scale, cfg.max_scale);
  s.sz = std::max(3, static_cast<int>(std::lround(s.scale * cfg.image_size)));
  s.sz = std::min(s.sz, cfg.image_size);
  s.px = static_cast<int>(rng.uniform_int(cfg.image_size - s.sz + 1));
  s.py = static_cast<int>(rng.uniform_int(cfg.image_size - s.sz + 1));
  return s;
}

struct GenerateResult {
  std::string taxonomy_path;
  std::string train_manifest;
  std::string test_manifest;
  int train_count = 0;
  int test_count = 0;
};

inline GenerateResult generate_shapes(const ShapesConfig& cfg, const std::string& out_dir) {
  HDL_CHECK(cfg.train_count >= 1 && cfg.test_count >= 1, "generate: counts must be >= 1");
  HDL_CHECK(cfg.min_scale > 0 && cfg.min_scale < cfg.max_scale && cfg.max_scale <= 1.0,
            "generate: degenerate scale bounds [", cfg.min_scale, ",", cfg.max_scale, "]");
  HDL_CHECK(cfg.image_size >= 8, "generate: image size too small: ", cfg.image_size);
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(fs::path(out_dir) / "images", ec);
  HDL_CHECK(!ec, "cannot create output directory ", out_dir, ": ", ec.message());

  GenerateResult result;
  result.taxonomy_path = (fs::path(out_dir) / "taxonomy.txt").string();
  {
    std::ofstream tf(result.taxonomy_path, std::ios::trunc);
    HDL_CHECK(tf.good(), "cannot write ", result.taxonomy_path);
    tf << shapes_taxonomy_text();
  }

  auto emit_split = [&](const char* split, int count, std::uint64_t index_base,
                        const std::string& manifest_path) {
    std::ofstream mf(manifest_path, std::ios::trunc | std::ios::binary);
    HDL_CHECK(mf.good(), "cannot write ", manifest_path);
    mf << "path,label_level1,label_level2,label_level3\n";
    for (int i = 0; i < count; ++i) {
      const SampleSpec s = draw_sample_spec(cfg, index_base + static_cast<std::uint64_t>(i));
      const Image img =
          render_shape(cfg.image_size, s.shape, kPalette[static_cast<std::size_t>(s.fill)].color,
                       kPalette[static_cast<std::size_t>(s.border)].color, s.px, s.py, s.sz,
                       cfg.thickness());
      std::ostringstream name;
      name << "images/" << split << "_" << std::setw(6) << std::setfill('0') << i << ".ppm";
      write_ppm((fs::path(out_dir) / name.str()).string(), img);
      mf << name.str() << "," << kPalette[static_cast<std::size_t>(s.fill)].name << ","
         << kPalette[static_cast<std::size_t>(s.border)].name << ","
         << kShapeNames[static_cast<std::size_t>(s.shape)] << "\n";
    }
    HDL_CHECK(mf.good(), "write failed for ", manifest_path);
  };

  result.train_manifest = (fs::path(out_dir) / "train_manifest.csv").string();
  result.test_manifest = (fs::path(out_dir) / "test_manifest.csv").string();
  emit_split("train", cfg.train_count, 0, result.train_manifest);
  emit_split("test", cfg.test_count, static_cast<std::uint64_t>(cfg.train_count),
             result.test_manifest);
  result.train_count = cfg.train_count;
  result.test_count = cfg.test_count;
  return result;
}

// ---------------------------------------------------------------------------
// Loading and batching
// ---------------------------------------------------------------------------

// One decoded sample. Pixels stay as bytes; batch assembly scales to [0,1].
struct Sample {
  std::string id;
  Image image;
  LabelPath labels;

  Tensor<float> to_tensor() const {
    const int h = image.height, w = image.width;
    Tensor<float> t({3, h, w});
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        for (int c = 0; c < 3; ++c)
          t.data[static_cast<std::size_t>((c * h + y) * w + x)] =
              static_cast<float>(image.rgb[(static_cast<std::size_t>(y) * w + x) * 3 +
                                           static_cast<std::size_t>(c)]) /
              255.0f;
    return t;
  }
};

// Loads a manifest in order. Paths are resolved relative to the manifest's
// directory; labels are resolved against the taxonomy. No augmentation or
// normalization is applied.
inline std::vector<Sample> load_dataset(const std::string& manifest_path, const Taxonomy& tax) {
  namespace fs = std::filesystem;
  std::ifstream f(manifest_path);
  HDL_CHECK(f.good(), "cannot open manifest ", manifest_path);
  const fs::path base = fs::path(manifest_path).parent_path();

  std::string line;
  HDL_CHECK(static_cast<bool>(std::getline(f, line)), "manifest ", manifest_path, " is empty");
  while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
  std::vector<std::string> header;
  {
    std::istringstream ss(line);
    std::string tok;
    while (std::getline(ss, tok, ',')) header.push_back(tok);
  }
  HDL_CHECK(header.size() == tax.num_levels() + 1 && header[0] == "path",
            "manifest ", manifest_path, ": header must be 'path,label_level1,...' with ",
            tax.num_levels(), " label columns");

  std::vector<Sample> samples;
  int lineno = 1;
  while (std::getline(f, line)) {
    ++lineno;
    while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::istringstream ss(line);
    std::string tok;
    while (std::getline(ss, tok, ',')) cols.push_back(tok);
    HDL_CHECK(cols.size() == tax.num_levels() + 1, "manifest ", manifest_path, ":", lineno,
              ": expected ", tax.num_levels() + 1, " columns, got ", cols.size());
    Sample s;
    s.id = cols[0];
    const std::string img_path = (base / cols[0]).string();
    HDL_CHECK(fs::exists(img_path), "manifest ", manifest_path, ":", lineno,
              ": missing image file ", img_path);
    s.image = read_ppm(img_path);
    for (std::size_t l = 0; l < tax.num_levels(); ++l)
      s.labels.push_back(tax.class_index(l, cols[l + 1]));
    samples.push_back(std::move(s));
  }
  HDL_CHECK(!samples.empty(), "manifest ", manifest_path, " contains no samples");
  return samples;
}

struct Batch {
  Tensor<float> images;                               // [n,3,h,w], values in [0,1]
  std::vector<std::vector<std::int64_t>> labels;      // per level, length n
  std::vector<std::size_t> indices;                   // sample indices in the source list
};

// Seeded Fisher-Yates shuffle, then fixed-size chunks; the final short batch
// is kept.
inline std::vector<std::vector<std::size_t>> epoch_order(std::size_t n, std::size_t batch_size,
                                                         Rng& rng, bool shuffle = true) {
  HDL_CHECK(batch_size >= 1, "batch size must be >= 1");
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  if (shuffle) rng.shuffle(perm);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t end = std::min(n, start + batch_size);
    batches.emplace_back(perm.begin() + static_cast<std::ptrdiff_t>(start),
                         perm.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

inline Batch assemble_batch(const std::vector<Sample>& samples,
                            const std::vector<std::size_t>& idxs) {
  HDL_CHECK(!idxs.empty(), "assemble_batch: empty index list");
  const Image& first = samples[idxs[0]].image;
  const int h = first.height, w = first.width;
  const std::size_t n_levels = samples[idxs[0]].labels.size();
  Batch batch;
  batch.indices = idxs;
  batch.images = Tensor<float>({static_cast<std::int64_t>(idxs.size()), 3, h, w});
  batch.labels.assign(n_levels, {});
  float* dst = batch.images.data.data();
  for (std::size_t bi = 0; bi < idxs.size(); ++bi) {
    const Sample& s = samples[idxs[bi]];
    HDL_CHECK(s.image.height == h && s.image.width == w,
              "assemble_batch: image size mismatch at sample ", s.id);
    const std::uint8_t* src = s.image.rgb.data();
    float* img_dst = dst + bi * 3 * h * w;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        for (int c = 0; c < 3; ++c)
          img_dst[(c * h + y) * w + x] = static_cast<float>(src[(y * w + x) * 3 + c]) / 255.0f;
    for (std::size_t l = 0; l < n_levels; ++l) batch.labels[l].push_back(s.labels[l]);
  }
  return batch;
}

}  // namespace hdl
