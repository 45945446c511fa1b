#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <random>
#include <sstream>

#include "partsynth/error.hpp"
#include "partsynth/io.hpp"
#include "test_support.hpp"

using namespace partsynth;

TEST(Vgrid, LayoutIsExact) {
  VoxelGrid g(2);
  g(1, 0, 1) = 0.25f;
  const auto bytes = io::encode_vgrid(g);
  ASSERT_EQ(bytes.size(), 8u + 4u + 8u * 4u);
  EXPECT_EQ(bytes.substr(0, 8), std::string("VGRID\0\0\1", 8));
  EXPECT_EQ(static_cast<unsigned char>(bytes[8]), 2u);
  EXPECT_EQ(bytes[9], 0);
  // x-major: (1,0,1) is flat index 5.
  float v = 0;
  std::memcpy(&v, bytes.data() + 12 + 5 * 4, 4);
  EXPECT_EQ(v, 0.25f);
}

TEST(Vgrid, RoundTripIsBitExact) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  for (int r : {1, 3, 8, 17}) {
    std::vector<float> vals(static_cast<std::size_t>(r) * r * r);
    for (auto& v : vals) v = u(rng);
    const VoxelGrid g(r, vals);
    const auto back = io::decode_vgrid(io::encode_vgrid(g));
    ASSERT_EQ(back.resolution(), r);
    EXPECT_EQ(std::memcmp(back.values().data(), g.values().data(), g.size() * 4), 0);
  }
}

TEST(Vgrid, FileRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "partsynth_io_test";
  const auto g = testing_support::random_grid(9, 4, 0.3);
  io::save_vgrid(dir / "a" / "g.vgrid", g);
  EXPECT_EQ(io::load_vgrid(dir / "a" / "g.vgrid"), g);
  std::filesystem::remove_all(dir);
}

TEST(Vgrid, RejectsMalformedInput) {
  const auto good = io::encode_vgrid(VoxelGrid(2));
  auto bad_magic = good;
  bad_magic[0] = 'X';
  EXPECT_THROW(io::decode_vgrid(bad_magic), Error);
  EXPECT_THROW(io::decode_vgrid(good.substr(0, good.size() - 1)), Error);
  auto out_of_range = good;
  const float big = 2.0f;
  std::memcpy(out_of_range.data() + 12, &big, 4);
  try {
    io::decode_vgrid(out_of_range);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Format);
  }
}

TEST(Obj, RoundTripAndFaceForms) {
  TriangleMesh m;
  m.vertices = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
  m.faces = {{0, 2, 1}, {0, 1, 3}, {0, 3, 2}, {1, 2, 3}};
  const auto text = io::to_obj(m);
  EXPECT_NE(text.find("f 1 3 2"), std::string::npos);
  const auto back = io::parse_obj(text);
  EXPECT_EQ(back.faces, m.faces);
  ASSERT_EQ(back.vertices.size(), 4u);
  EXPECT_NEAR(back.vertices[3][2], 1.0, 1e-6);
  const auto slashed = io::parse_obj("# c\nv 0 0 0\nv 1 0 0\nv 0 1 0\nvn 0 0 1\nf 1/1/1 2//1 3/2\n");
  ASSERT_EQ(slashed.faces.size(), 1u);
  EXPECT_EQ(slashed.faces[0][2], 2);
  EXPECT_THROW(io::parse_obj("v 0 0 0\nf 1 2 3\n"), Error);
}

TEST(Csv, HeaderAndRows) {
  PointCloud c{{{0.5, -1, 2}}};
  const auto text = io::to_csv(c);
  EXPECT_EQ(text.rfind("x,y,z\n", 0), 0u);
  EXPECT_NE(text.find("0.5"), std::string::npos);
}

TEST(Base64, RoundTripAndRejects) {
  for (std::string s : {std::string(), std::string("f"), std::string("fo"), std::string("foo"), std::string("\0\xff\x10", 3)}) {
    EXPECT_EQ(io::base64_decode(io::base64_encode(s)), s);
  }
  EXPECT_EQ(io::base64_encode("foobar"), "Zm9vYmFy");
  EXPECT_THROW(io::base64_decode("Zm9v*mFy"), Error);
}

TEST(Digest, StableAndSensitive) {
  EXPECT_EQ(io::digest(""), "cbf29ce484222325");
  EXPECT_EQ(io::digest("abc").size(), 16u);
  EXPECT_NE(io::digest("abc"), io::digest("abd"));
}
