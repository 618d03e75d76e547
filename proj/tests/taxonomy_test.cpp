#include <gtest/gtest.h>

#include <set>
#include <string>
#include <vector>

#include "hdl/data.hpp"
#include "hdl/taxonomy.hpp"

using hdl::LabelPath;
using hdl::path_accuracy;
using hdl::per_level_accuracy;
using hdl::Taxonomy;

namespace {

// Exhaustive path enumeration, independent of the DP inside the library.
std::uint64_t brute_force_paths(const Taxonomy& tax) {
  std::vector<std::size_t> sizes;
  for (std::size_t l = 0; l < tax.num_levels(); ++l) sizes.push_back(tax.level(l).classes.size());
  std::uint64_t total = 1;
  for (std::size_t s : sizes) total *= s;
  std::uint64_t valid = 0;
  for (std::uint64_t code = 0; code < total; ++code) {
    LabelPath path;
    std::uint64_t c = code;
    for (std::size_t s : sizes) {
      path.push_back(static_cast<std::int64_t>(c % s));
      c /= s;
    }
    if (tax.is_valid_path(path)) ++valid;
  }
  return valid;
}

}  // namespace

TEST(Taxonomy, ShapesHierarchyHasExactly72ValidPaths) {
  const Taxonomy tax = Taxonomy::parse(hdl::shapes_taxonomy_text());
  ASSERT_EQ(tax.num_levels(), 3u);
  EXPECT_EQ(tax.level(0).name, "fill");
  EXPECT_EQ(tax.level(1).name, "border");
  EXPECT_EQ(tax.level(2).name, "shape");
  EXPECT_EQ(tax.level(0).classes.size(), 6u);
  EXPECT_EQ(tax.level(1).classes.size(), 6u);
  EXPECT_EQ(tax.level(2).classes.size(), 2u);
  EXPECT_EQ(tax.count_valid_paths(), 72u);
  EXPECT_EQ(brute_force_paths(tax), 72u);
}

TEST(Taxonomy, ShippedAnimalsFileHasExactly8ValidPaths) {
  const Taxonomy tax = Taxonomy::load(std::string(HDL_SOURCE_DIR) + "/taxonomies/animals.txt");
  ASSERT_EQ(tax.num_levels(), 3u);
  EXPECT_EQ(tax.level(0).classes.size(), 6u);  // families
  EXPECT_EQ(tax.level(1).classes.size(), 8u);  // species
  EXPECT_EQ(tax.level(2).classes.size(), 2u);  // classes
  EXPECT_EQ(tax.count_valid_paths(), 8u);
  EXPECT_EQ(brute_force_paths(tax), 8u);
  // Spot checks: one mammal chain, one reptile chain.
  EXPECT_TRUE(tax.is_valid_path({tax.class_index(0, "felidae"),
                                 tax.class_index(1, "malaysia_tiger"),
                                 tax.class_index(2, "mammalia")}));
  EXPECT_TRUE(tax.is_valid_path({tax.class_index(0, "pythonidae"),
                                 tax.class_index(1, "python_molurus"),
                                 tax.class_index(2, "reptilia")}));
  EXPECT_FALSE(tax.is_valid_path({tax.class_index(0, "felidae"),
                                  tax.class_index(1, "python_molurus"),
                                  tax.class_index(2, "reptilia")}));
}

TEST(Taxonomy, ShippedShapesFileMatchesGeneratedText) {
  const Taxonomy tax = Taxonomy::load(std::string(HDL_SOURCE_DIR) + "/taxonomies/shapes.txt");
  EXPECT_EQ(tax.count_valid_paths(), 72u);
  EXPECT_EQ(tax.level(2).classes, (std::vector<std::string>{"triangle", "square"}));
}

TEST(Taxonomy, LevelOrderIsTakenVerbatim) {
  // Narrow-to-wide declaration is allowed: order comes from the file.
  const Taxonomy tax = Taxonomy::parse(
      "level shape: tri, sq\n"
      "level fill: a, b, c\n"
      "edge tri -> a\nedge tri -> b\nedge tri -> c\n"
      "edge sq -> a\nedge sq -> b\nedge sq -> c\n");
  ASSERT_EQ(tax.num_levels(), 2u);
  EXPECT_EQ(tax.level(0).name, "shape");
  EXPECT_EQ(tax.level(1).name, "fill");
  EXPECT_EQ(tax.count_valid_paths(), 6u);
}

TEST(Taxonomy, SingleLevelTaxonomyWorks) {
  const Taxonomy tax = Taxonomy::parse("level only: x, y, z\n");
  EXPECT_EQ(tax.count_valid_paths(), 3u);
  EXPECT_TRUE(tax.is_valid_path({2}));
  EXPECT_FALSE(tax.is_valid_path({3}));
  EXPECT_FALSE(tax.is_valid_path({0, 0}));
}

TEST(Taxonomy, CountValidPathsMatchesBruteForceOnSparseGraph) {
  const Taxonomy tax = Taxonomy::parse(
      "level a: a1, a2, a3\n"
      "level b: b1, b2\n"
      "level c: c1, c2, c3, c4\n"
      "edge a1 -> b1\nedge a2 -> b1\nedge a2 -> b2\nedge a3 -> b2\n"
      "edge b1 -> c1\nedge b1 -> c2\nedge b2 -> c2\nedge b2 -> c3\nedge b2 -> c4\n");
  // a1b1{c1,c2}=2, a2b1{c1,c2}=2, a2b2{c2,c3,c4}=3, a3b2{..}=3 -> 10
  EXPECT_EQ(tax.count_valid_paths(), 10u);
  EXPECT_EQ(brute_force_paths(tax), 10u);
}

TEST(Taxonomy, CommentsAndBlankLinesAreIgnored) {
  const Taxonomy tax = Taxonomy::parse(
      "# header comment\n\n"
      "level a: x # trailing comment\n"
      "\n# another\n"
      "level b: y\n"
      "edge x -> y # also here\n");
  EXPECT_EQ(tax.count_valid_paths(), 1u);
}

TEST(TaxonomyErrors, RejectsMalformedInput) {
  EXPECT_THROW(Taxonomy::parse(""), hdl::Error);                                // no levels
  EXPECT_THROW(Taxonomy::parse("level a x, y\n"), hdl::Error);                  // missing colon
  EXPECT_THROW(Taxonomy::parse("level a: x\nlevel a: y\nedge x -> y\n"), hdl::Error);  // dup level
  EXPECT_THROW(Taxonomy::parse("level a: x, x\n"), hdl::Error);                 // dup class
  EXPECT_THROW(Taxonomy::parse("level a:\n"), hdl::Error);                      // empty level
  EXPECT_THROW(Taxonomy::parse("level a: x,, y\n"), hdl::Error);                // empty class
  EXPECT_THROW(Taxonomy::parse("levels a: x\n"), hdl::Error);                   // bad directive
  EXPECT_THROW(Taxonomy::parse("level a: x\nlevel b: y\nedge x y\n"), hdl::Error);  // no arrow
}

TEST(TaxonomyErrors, DanglingEdgeNamesTheOffendingLine) {
  try {
    Taxonomy::parse("level a: x\nlevel b: y\nedge x -> y\nedge x -> nope\n", "tax.txt");
    FAIL() << "expected an error";
  } catch (const hdl::Error& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("tax.txt:4"), std::string::npos) << msg;
    EXPECT_NE(msg.find("dangling"), std::string::npos) << msg;
  }
}

TEST(TaxonomyErrors, AmbiguousEdgeIsRejected) {
  // "x -> y" matches both a->b (x in a, y in b) and b->c (x in b, y in c).
  const std::string text =
      "level a: x, p\n"
      "level b: x, y\n"
      "level c: y\n"
      "edge p -> x\n"
      "edge x -> y\n";
  try {
    Taxonomy::parse(text);
    FAIL() << "expected an error";
  } catch (const hdl::Error& e) {
    EXPECT_NE(std::string(e.what()).find("ambiguous"), std::string::npos) << e.what();
  }
}

TEST(TaxonomyErrors, OrphanClassIsRejected) {
  try {
    Taxonomy::parse("level a: x\nlevel b: y, z\nedge x -> y\n");
    FAIL() << "expected an error";
  } catch (const hdl::Error& e) {
    EXPECT_NE(std::string(e.what()).find("no parent edge"), std::string::npos) << e.what();
  }
}

TEST(TaxonomyErrors, UnknownClassLookupThrows) {
  const Taxonomy tax = Taxonomy::parse("level a: x\n");
  EXPECT_THROW(tax.class_index(0, "missing"), hdl::Error);
}

TEST(Metrics, ViolationRateCountsInvalidPaths) {
  const Taxonomy tax = Taxonomy::parse(hdl::shapes_taxonomy_text());
  // Ground-truth-copied predictions violate nothing.
  std::vector<LabelPath> valid;
  for (std::int64_t f = 0; f < 6; ++f) valid.push_back({f, (f + 1) % 6, f % 2});
  EXPECT_EQ(violation_rate(tax, valid), 0.0);

  std::vector<LabelPath> invalid(4, LabelPath{0, 0, 5});  // class index out of range
  EXPECT_EQ(violation_rate(tax, invalid), 1.0);

  std::vector<LabelPath> mixed(7, LabelPath{1, 2, 1});
  mixed.push_back({0, 0, 4});
  mixed.push_back({-1, 0, 0});
  mixed.push_back({0, 1});  // wrong length
  EXPECT_DOUBLE_EQ(violation_rate(tax, mixed), 0.3);

  EXPECT_EQ(violation_rate(tax, {}), 0.0);
}

TEST(Metrics, PerLevelAccuracy) {
  std::vector<LabelPath> truths{{0, 1}, {1, 0}, {2, 1}, {0, 0}};
  EXPECT_EQ(per_level_accuracy(truths, truths), (std::vector<double>{1.0, 1.0}));

  std::vector<LabelPath> preds{{1, 1}, {0, 0}, {0, 1}, {1, 0}};  // level 1 all wrong, level 2 all right
  EXPECT_EQ(per_level_accuracy(preds, truths), (std::vector<double>{0.0, 1.0}));

  std::vector<LabelPath> half{{0, 1}, {1, 0}, {0, 0}, {1, 1}};
  EXPECT_EQ(per_level_accuracy(half, truths), (std::vector<double>{0.5, 0.5}));

  EXPECT_THROW(per_level_accuracy(std::vector<LabelPath>{}, std::vector<LabelPath>{}), hdl::Error);
  EXPECT_THROW(per_level_accuracy(preds, std::vector<LabelPath>{{0, 1}}), hdl::Error);
  std::vector<LabelPath> ragged{{0, 1}, {1}, {0, 0}, {1, 1}};
  EXPECT_THROW(per_level_accuracy(ragged, truths), hdl::Error);
}

TEST(Metrics, PathAccuracyIsExactMatchFraction) {
  std::vector<LabelPath> truths{{0, 1}, {1, 0}, {2, 1}, {0, 0}};
  std::vector<LabelPath> preds{{0, 1}, {1, 1}, {2, 1}, {1, 0}};
  EXPECT_DOUBLE_EQ(path_accuracy(preds, truths), 0.5);
  EXPECT_EQ(path_accuracy(truths, truths), 1.0);
  EXPECT_EQ(path_accuracy(std::vector<LabelPath>{}, std::vector<LabelPath>{}), 0.0);
}
