#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>

#include "hdl/serialize.hpp"

using hdl::NamedTensors;
using hdl::Tensor;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

std::string read_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

void write_bytes(const std::string& path, const std::string& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

NamedTensors<double> sample_tensors() {
  NamedTensors<double> ts;
  Tensor<double> a({2, 3});
  for (int i = 0; i < 6; ++i) a.data[i] = (i - 2) * 1.25;
  Tensor<double> b({4});
  b.data = {0.0, -0.0, 3.141592653589793, -std::numeric_limits<double>::denorm_min()};
  ts.emplace_back("stem.conv.w", a);
  ts.emplace_back("head.level1.b", b);
  ts.emplace_back("scalarish", Tensor<double>::scalar(42.5));
  return ts;
}

}  // namespace

TEST(Serialize, RoundTripPreservesNamesShapesAndBits) {
  const std::string path = temp_path("hdl_serialize_rt.bin");
  const NamedTensors<double> ts = sample_tensors();
  save_params(path, ts);
  const NamedTensors<double> back = hdl::load_params<double>(path);
  ASSERT_EQ(back.size(), ts.size());
  for (std::size_t i = 0; i < ts.size(); ++i) {
    EXPECT_EQ(back[i].first, ts[i].first);
    EXPECT_EQ(back[i].second.shape, ts[i].second.shape);
    ASSERT_EQ(back[i].second.data.size(), ts[i].second.data.size());
    for (std::size_t k = 0; k < ts[i].second.data.size(); ++k)
      EXPECT_EQ(std::bit_cast<std::uint64_t>(back[i].second.data[k]),
                std::bit_cast<std::uint64_t>(ts[i].second.data[k]));
  }
  std::remove(path.c_str());
}

TEST(Serialize, FloatRoundTrip) {
  const std::string path = temp_path("hdl_serialize_f32.bin");
  NamedTensors<float> ts;
  Tensor<float> a({3});
  a.data = {1.5f, -2.25f, 1e-30f};
  ts.emplace_back("w", a);
  save_params(path, ts);
  const NamedTensors<float> back = hdl::load_params<float>(path);
  ASSERT_EQ(back.size(), 1u);
  for (int i = 0; i < 3; ++i) EXPECT_EQ(back[0].second.data[i], a.data[i]);
  std::remove(path.c_str());
}

TEST(Serialize, SavingTwiceIsByteIdentical) {
  const std::string p1 = temp_path("hdl_serialize_a.bin");
  const std::string p2 = temp_path("hdl_serialize_b.bin");
  save_params(p1, sample_tensors());
  save_params(p2, sample_tensors());
  EXPECT_EQ(read_bytes(p1), read_bytes(p2));
  std::remove(p1.c_str());
  std::remove(p2.c_str());
}

TEST(Serialize, PrecisionMismatchThrows) {
  const std::string path = temp_path("hdl_serialize_dtype.bin");
  NamedTensors<float> ts;
  ts.emplace_back("w", Tensor<float>::zeros({2}));
  save_params(path, ts);
  try {
    hdl::load_params<double>(path);
    FAIL() << "expected an error";
  } catch (const hdl::Error& e) {
    EXPECT_NE(std::string(e.what()).find("precision mode mismatch"), std::string::npos);
  }
  std::remove(path.c_str());
}

TEST(Serialize, TruncatedFileThrows) {
  const std::string path = temp_path("hdl_serialize_trunc.bin");
  save_params(path, sample_tensors());
  const std::string bytes = read_bytes(path);
  write_bytes(path, bytes.substr(0, bytes.size() - 5));
  try {
    hdl::load_params<double>(path);
    FAIL() << "expected an error";
  } catch (const hdl::Error& e) {
    EXPECT_NE(std::string(e.what()).find("truncated"), std::string::npos);
  }
  std::remove(path.c_str());
}

TEST(Serialize, TrailingBytesThrow) {
  const std::string path = temp_path("hdl_serialize_trail.bin");
  save_params(path, sample_tensors());
  write_bytes(path, read_bytes(path) + "x");
  try {
    hdl::load_params<double>(path);
    FAIL() << "expected an error";
  } catch (const hdl::Error& e) {
    EXPECT_NE(std::string(e.what()).find("trailing"), std::string::npos);
  }
  std::remove(path.c_str());
}

TEST(Serialize, BadMagicThrows) {
  const std::string path = temp_path("hdl_serialize_magic.bin");
  write_bytes(path, "NOPE12345678");
  EXPECT_THROW(hdl::load_params<double>(path), hdl::Error);
  std::remove(path.c_str());
}

TEST(Serialize, MissingFileThrows) {
  EXPECT_THROW(hdl::load_params<double>(temp_path("hdl_no_such_file.bin")), hdl::Error);
}

TEST(Serialize, EmptyListRoundTrips) {
  const std::string path = temp_path("hdl_serialize_empty.bin");
  save_params(path, NamedTensors<double>{});
  EXPECT_TRUE(hdl::load_params<double>(path).empty());
  std::remove(path.c_str());
}
