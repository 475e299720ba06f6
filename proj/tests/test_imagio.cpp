#include <gtest/gtest.h>

#include <random>

#include "liplab/imagio.hpp"
#include "test_util.hpp"

using namespace liplab;
using liplab::testing::slurp;
using liplab::testing::TempDir;

TEST(Netpbm, RampRoundTripIsByteIdentical) {
  TempDir dir("pgm");
  ByteImage ramp(3, 3, 1);
  for (int i = 0; i < 9; ++i) ramp.data[i] = static_cast<std::uint8_t>(i * 30);
  write_pgm(dir.file("ramp.pgm"), ramp);
  EXPECT_EQ(read_pgm(dir.file("ramp.pgm")), ramp);
  EXPECT_EQ(slurp(dir.file("ramp.pgm")).substr(0, 11), "P5\n3 3\n255\n");
  write_pgm(dir.file("again.pgm"), read_pgm(dir.file("ramp.pgm")));
  EXPECT_EQ(slurp(dir.file("again.pgm")), slurp(dir.file("ramp.pgm")));
}

TEST(Netpbm, HandEncodedPpm) {
  TempDir dir("ppm");
  const std::string bytes = std::string("P6\n# comment\n2 2\n255\n") +
                            std::string("\xff\x00\x00\x00\xff\x00\x00\x00\xff\xff\xff\xff", 12);
  liplab::detail::write_file(dir.file("a.ppm"), bytes);
  const ByteImage img = read_ppm(dir.file("a.ppm"));
  ASSERT_EQ(img.height, 2);
  ASSERT_EQ(img.width, 2);
  const std::uint8_t want[12] = {255, 0, 0, 0, 255, 0, 0, 0, 255, 255, 255, 255};
  for (int i = 0; i < 12; ++i) EXPECT_EQ(img.data[i], want[i]);
}

TEST(Netpbm, RejectsWideMaxval) {
  TempDir dir("maxval");
  liplab::detail::write_file(dir.file("a.pgm"), std::string("P5\n1 1\n65535\n\0\0", 16));
  try {
    read_pgm(dir.file("a.pgm"));
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("unsupported maxval"), std::string::npos);
    EXPECT_EQ(e.offset(), 7u);  // first digit of the maxval field
  }
}

TEST(Netpbm, RejectsTruncatedAndMalformed) {
  TempDir dir("bad");
  liplab::detail::write_file(dir.file("short.pgm"), "P5\n4 4\n255\nabc");
  EXPECT_THROW(read_pgm(dir.file("short.pgm")), FormatError);
  liplab::detail::write_file(dir.file("ascii.pgm"), "P2\n1 1\n255\n0\n");
  EXPECT_THROW(read_pgm(dir.file("ascii.pgm")), FormatError);
  liplab::detail::write_file(dir.file("noheight.pgm"), "P5\n4 x\n255\n");
  EXPECT_THROW(read_pgm(dir.file("noheight.pgm")), FormatError);
  EXPECT_THROW(read_ppm(dir.file("missing.ppm")), DataError);
}

TEST(Netpbm, RandomRoundTrips) {
  TempDir dir("rand");
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 25; ++trial) {
    const int h = 1 + static_cast<int>(rng() % 40), w = 1 + static_cast<int>(rng() % 40);
    ByteImage rgb(h, w, 3), gray(h, w, 1);
    for (auto& v : rgb.data) v = static_cast<std::uint8_t>(rng());
    for (auto& v : gray.data) v = static_cast<std::uint8_t>(rng());
    write_ppm(dir.file("x.ppm"), rgb);
    write_pgm(dir.file("x.pgm"), gray);
    EXPECT_EQ(read_ppm(dir.file("x.ppm")), rgb);
    EXPECT_EQ(read_pgm(dir.file("x.pgm")), gray);
  }
}

TEST(Netpbm, MaskThresholdAndRoundTrip) {
  TempDir dir("mask");
  ByteImage img(1, 4, 1);
  img.data = {0, 127, 128, 255};
  const BinaryMask m = mask_from_image(img);
  EXPECT_EQ(m.bits, (std::vector<std::uint8_t>{0, 0, 1, 1}));
  write_mask(dir.file("m.pgm"), m);
  EXPECT_EQ(read_mask(dir.file("m.pgm")), m);
}

TEST(Grayscale, Weights) {
  ByteImage px(1, 3, 3);
  px.data = {100, 150, 200, 255, 255, 255, 0, 0, 0};
  const FloatImage g = to_grayscale(px);
  EXPECT_NEAR(g.data[0], 140.75, 1e-4);
  EXPECT_NEAR(g.data[1], 255.0, 1e-4);
  EXPECT_EQ(g.data[2], 0.0f);
  EXPECT_THROW(to_grayscale(ByteImage(2, 2, 1)), ShapeError);
}

TEST(Grayscale, GrayPixelsAreFixedAndChannelsAffine) {
  ByteImage px(1, 256, 3);
  for (int v = 0; v < 256; ++v)
    for (int c = 0; c < 3; ++c) px.at(0, v, c) = static_cast<std::uint8_t>(v);
  const FloatImage g = to_grayscale(px);
  for (int v = 0; v < 256; ++v) EXPECT_NEAR(g.data[v], v, 1e-4);

  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    ByteImage a(1, 1, 3), b(1, 1, 3);
    for (int c = 0; c < 3; ++c) a.data[c] = b.data[c] = static_cast<std::uint8_t>(rng() % 200);
    const int c = static_cast<int>(rng() % 3);
    b.data[c] = static_cast<std::uint8_t>(a.data[c] + 50);
    const double w[3] = {0.299, 0.587, 0.114};
    EXPECT_NEAR(to_grayscale(b).data[0] - to_grayscale(a).data[0], 50 * w[c], 1e-3);
  }
}

TEST(Landmarks, ParseAndRoundTrip) {
  TempDir dir("lm");
  liplab::detail::write_file(dir.file("one.csv"), "ch_l,10.0,20.0\n");
  const LandmarkSet one = read_landmarks(dir.file("one.csv"));
  ASSERT_EQ(one.size(), 1u);
  EXPECT_EQ(one.names[0], "ch_l");
  EXPECT_EQ(one.points[0], (Point2{10.0, 20.0}));

  LandmarkSet set;
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> coord(0.0, 256.0);
  for (int i = 0; i < 50; ++i) set.push_back("p" + std::to_string(i), {coord(rng), coord(rng)});
  write_landmarks(dir.file("set.csv"), set);
  const LandmarkSet back = read_landmarks(dir.file("set.csv"));
  EXPECT_EQ(back.names, set.names);
  EXPECT_EQ(back.points, set.points);
}

TEST(Landmarks, FixtureKeepsFileOrder) {
  const LandmarkSet lm = read_landmarks(std::string(LIPLAB_DATA_DIR) + "/landmarks_example.csv");
  const std::vector<std::string> want{"ch_l", "up_l", "cph_l", "ls", "cph_r", "up_r", "ch_r", "lo_r", "sto", "lo_l"};
  EXPECT_EQ(lm.names, want);
}

TEST(Landmarks, Errors) {
  TempDir dir("lmerr");
  liplab::detail::write_file(dir.file("empty.csv"), "");
  try {
    read_landmarks(dir.file("empty.csv"));
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("no landmarks"), std::string::npos);
  }
  liplab::detail::write_file(dir.file("dup.csv"), "a,1,2\na,3,4\n");
  EXPECT_THROW(read_landmarks(dir.file("dup.csv")), DataError);
  liplab::detail::write_file(dir.file("nan.csv"), "a,1,x\n");
  EXPECT_THROW(read_landmarks(dir.file("nan.csv")), DataError);
  liplab::detail::write_file(dir.file("cols.csv"), "a,1\n");
  EXPECT_THROW(read_landmarks(dir.file("cols.csv")), DataError);
}

TEST(TensorFile, SmallRoundTrip) {
  TempDir dir("tensor");
  FloatTensor t{{2, 2}, {1, 2, 3, 4}};
  write_tensor(dir.file("t.bin"), t);
  EXPECT_EQ(read_tensor(dir.file("t.bin")), t);
  const std::string bytes = slurp(dir.file("t.bin"));
  EXPECT_EQ(bytes.size(), 8u + 4 + 8 + 16);
  EXPECT_EQ(bytes.substr(0, 8), "LIPLAB01");
}

TEST(TensorFile, BitExactForArbitraryFloats) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    FloatTensor t;
    const int rank = 1 + static_cast<int>(rng() % 4);
    for (int i = 0; i < rank; ++i) t.dims.push_back(1 + static_cast<std::uint32_t>(rng() % 6));
    t.data.resize(t.element_count());
    for (auto& v : t.data) {
      std::uint32_t bits = static_cast<std::uint32_t>(rng());
      if ((bits & 0x7f800000u) == 0x7f800000u) bits &= ~0x40000000u;
      std::memcpy(&v, &bits, 4);
    }
    const FloatTensor back = decode_tensor(encode_tensor(t));
    ASSERT_EQ(back.dims, t.dims);
    EXPECT_EQ(std::memcmp(back.data.data(), t.data.data(), t.data.size() * 4), 0);
  }
}

TEST(TensorFile, Errors) {
  FloatTensor t{{2, 2}, {1, 2, 3, 4}};
  std::string bytes = encode_tensor(t);
  std::string bad = bytes;
  bad.replace(0, 8, "XXXXXXXX");
  EXPECT_THROW(decode_tensor(bad), FormatError);

  FloatTensor big{{256, 256, 5}, std::vector<float>(256 * 256 * 5)};
  std::string big_bytes = encode_tensor(big);
  big_bytes.resize(big_bytes.size() - 4);
  try {
    decode_tensor(big_bytes);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("payload mismatch"), std::string::npos);
  }
  EXPECT_THROW(encode_tensor(FloatTensor{{3}, {1, 2}}), ShapeError);
}
