#include <gtest/gtest.h>

#include <filesystem>

#include "cffm/cft.hpp"

using namespace cffm;

TEST(Cft, RoundTripAllTypes) {
  Tensor<float> f(Shape{2, 3}, {1.5f, -2, 3, 4, 5, 6e-20f});
  EXPECT_EQ(cft::decode<float>(cft::encode(f)), f);
  Tensor<double> d(Shape{4}, {1e300, -0.0, 3.25, 1.0 / 3.0});
  EXPECT_EQ(cft::decode<double>(cft::encode(d)), d);
  Tensor<std::uint8_t> m(Shape{2, 2}, {0, 1, 255, 7});
  EXPECT_EQ(cft::decode<std::uint8_t>(cft::encode(m)), m);
}

TEST(Cft, HeaderLayout) {
  Tensor<std::uint8_t> m(Shape{2, 258}, 9);
  auto bytes = cft::encode(m);
  ASSERT_EQ(bytes.size(), 4u + 2 + 8 + 516);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "CFT1");
  EXPECT_EQ(bytes[4], 2);  // u8
  EXPECT_EQ(bytes[5], 2);  // rank
  EXPECT_EQ(bytes[6], 2);
  EXPECT_EQ(bytes[10], 2);  // 258 = 0x0102, little endian
  EXPECT_EQ(bytes[11], 1);
}

TEST(Cft, FloatPromotesToDouble) {
  Tensor<float> f(Shape{2}, {0.1f, 2});
  auto d = cft::decode<double>(cft::encode(f));
  EXPECT_EQ(d[0], static_cast<double>(0.1f));
  EXPECT_EQ(cft::peek_dtype(cft::encode(f)), cft::DType::F32);
}

TEST(Cft, RejectsMalformed) {
  auto bytes = cft::encode(Tensor<float>(Shape{2, 2}));
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(cft::decode<float>(bad_magic), cft::FormatError);
  auto truncated = bytes;
  truncated.pop_back();
  EXPECT_THROW(cft::decode<float>(truncated), cft::FormatError);
  EXPECT_THROW(cft::decode<std::uint8_t>(bytes), cft::FormatError);
}

TEST(Cft, FileRoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "cffm_cft_test.cft";
  Tensor<double> d(Shape{3, 1, 2}, {1, 2, 3, 4, 5, 6});
  cft::save(path, d);
  EXPECT_EQ(cft::load<double>(path), d);
  std::filesystem::remove(path);
}
