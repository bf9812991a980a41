#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "ddrnet/tensor.hpp"

using namespace ddrnet;

namespace {

Tensor random_tensor(const Shape& shape, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-10.0, 10.0);
  Tensor t(shape);
  for (double& v : t.data()) v = dist(rng);
  return t;
}

}  // namespace

TEST(Tensor, NewTensorFills) {
  Tensor z = new_tensor({2, 3}, 0.0);
  EXPECT_EQ(z.shape(), (Shape{2, 3}));
  EXPECT_EQ(z.size(), 6u);
  for (double v : z.data()) EXPECT_EQ(v, 0.0);

  Tensor one = new_tensor({1}, 7.5);
  ASSERT_EQ(one.size(), 1u);
  EXPECT_EQ(one[0], 7.5);

  Tensor cube = new_tensor({2, 2, 2}, 1.0);
  EXPECT_EQ(cube.size(), 8u);
  EXPECT_EQ(sum(cube), 8.0);
}

TEST(Tensor, InvalidShapesRejected) {
  EXPECT_THROW(new_tensor({}, 0.0), ShapeError);
  EXPECT_THROW(new_tensor({3, 0}, 0.0), ShapeError);
  EXPECT_THROW(Tensor(Shape{2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
}

TEST(Tensor, ElementwiseAdd) {
  Tensor a({2}, std::vector<double>{1, 2});
  Tensor b({2}, std::vector<double>{3, 4});
  Tensor c = elementwise_add(a, b);
  EXPECT_EQ(c[0], 4.0);
  EXPECT_EQ(c[1], 6.0);

  Tensor h({1}, std::vector<double>{0.5});
  Tensor m({1}, std::vector<double>{-0.5});
  EXPECT_EQ(elementwise_add(h, m)[0], 0.0);

  std::mt19937_64 rng(3);
  Tensor x = random_tensor({3, 4}, rng);
  EXPECT_EQ(elementwise_add(x, new_tensor({3, 4}, 0.0)), x);
}

TEST(Tensor, AddNeverBroadcasts) {
  EXPECT_THROW(elementwise_add(new_tensor({2, 3}, 1), new_tensor({3}, 1)), ShapeError);
  EXPECT_THROW(elementwise_add(new_tensor({2, 1}, 1), new_tensor({2, 3}, 1)), ShapeError);
}

TEST(Tensor, AddIsCommutativeAndAssociativeOnExactlyRepresentableValues) {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> dist(-1000, 1000);
  for (int trial = 0; trial < 20; ++trial) {
    Shape shape{1 + rng() % 4, 1 + rng() % 5, 1 + rng() % 3};
    Tensor a(shape), b(shape), c(shape);
    // Quarter-integers: sums stay exact in double so association is exact too.
    for (auto* t : {&a, &b, &c}) {
      for (double& v : t->data()) v = dist(rng) / 4.0;
    }
    EXPECT_EQ(elementwise_add(a, b), elementwise_add(b, a));
    EXPECT_EQ(elementwise_add(elementwise_add(a, b), c), elementwise_add(a, elementwise_add(b, c)));
  }
}

TEST(Tensor, ConcatChannels) {
  std::vector<Tensor> two{new_tensor({1, 4, 8, 8, 8}, 1.0), new_tensor({1, 4, 8, 8, 8}, 2.0)};
  Tensor cat = concat_channels(two, 1);
  EXPECT_EQ(cat.shape(), (Shape{1, 8, 8, 8, 8}));
  EXPECT_EQ(cat.at({0, 3, 7, 7, 7}), 1.0);
  EXPECT_EQ(cat.at({0, 4, 0, 0, 0}), 2.0);

  std::mt19937_64 rng(5);
  std::vector<Tensor> single{random_tensor({2, 3, 4}, rng)};
  EXPECT_EQ(concat_channels(single, 1), single[0]);

  std::vector<Tensor> three{random_tensor({2, 2, 3}, rng), random_tensor({2, 3, 3}, rng),
                            random_tensor({2, 5, 3}, rng)};
  Tensor c3 = concat_channels(three, 1);
  EXPECT_EQ(c3.shape(), (Shape{2, 10, 3}));
  EXPECT_EQ(slice_axis(c3, 1, 0, 2), three[0]);
  EXPECT_EQ(slice_axis(c3, 1, 2, 3), three[1]);
  EXPECT_EQ(slice_axis(c3, 1, 5, 5), three[2]);
}

TEST(Tensor, ConcatRejectsIncompatibleParts) {
  std::vector<Tensor> bad{new_tensor({1, 2, 4}, 0), new_tensor({1, 2, 5}, 0)};
  EXPECT_THROW(concat_channels(bad, 1), ShapeError);
}

TEST(Tensor, ConcatThenSliceRoundTripsRandomParts) {
  std::mt19937_64 rng(42);
  for (int trial = 0; trial < 25; ++trial) {
    const std::size_t rank = 1 + rng() % 4;
    const std::size_t axis = rng() % rank;
    Shape base(rank);
    for (auto& d : base) d = 1 + rng() % 4;
    std::vector<Tensor> parts;
    const std::size_t n = 1 + rng() % 4;
    for (std::size_t i = 0; i < n; ++i) {
      Shape s = base;
      s[axis] = 1 + rng() % 3;
      parts.push_back(random_tensor(s, rng));
    }
    Tensor cat = concat_channels(parts, axis);
    std::size_t begin = 0;
    for (const Tensor& p : parts) {
      EXPECT_EQ(slice_axis(cat, axis, begin, p.dim(axis)), p);
      begin += p.dim(axis);
    }
  }
}

TEST(Tensor, LinearizationRoundTrip) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    Shape s(1 + rng() % 5);
    for (auto& d : s) d = 1 + rng() % 5;
    Tensor t(s);
    const auto strides = t.strides();
    for (std::size_t off = 0; off < t.size(); ++off) {
      auto idx = t.index_of(off);
      EXPECT_EQ(t.offset_of(idx), off);
      std::size_t manual = 0;
      for (std::size_t k = 0; k < s.size(); ++k) manual += idx[k] * strides[k];
      EXPECT_EQ(manual, off);
    }
  }
}

TEST(Tnsr, RoundTripEveryDtype) {
  std::mt19937_64 rng(1);
  Tensor f64 = random_tensor({2, 3, 4}, rng);
  Tensor f32({3}, std::vector<double>{0.5, -1.25, 3.0}, DType::Float32);
  Tensor u8({2, 2}, std::vector<double>{0, 1, 254, 255}, DType::UInt8);
  Tensor i32({3}, std::vector<double>{-7, 0, 123456}, DType::Int32);
  for (const Tensor& t : {f64, f32, u8, i32}) {
    std::stringstream ss;
    write_tnsr(ss, t);
    EXPECT_EQ(read_tnsr(ss), t);
  }
}

TEST(Tnsr, HeaderLayoutIsExact) {
  Tensor t({2}, std::vector<double>{1, 2}, DType::UInt8);
  std::stringstream ss;
  write_tnsr(ss, t);
  const std::string bytes = ss.str();
  const std::string expected = std::string("TNSR") + '\x01' + '\x02' + '\x01' + std::string("\x02\x00\x00\x00", 4) +
                               '\x01' + '\x02';
  EXPECT_EQ(bytes, expected);
}

TEST(Tnsr, TruncatedFileIsFormatError) {
  std::mt19937_64 rng(2);
  std::stringstream ss;
  write_tnsr(ss, random_tensor({4, 4}, rng));
  std::string bytes = ss.str();
  for (std::size_t cut : {std::size_t{0}, std::size_t{3}, std::size_t{6}, std::size_t{10}, bytes.size() - 1}) {
    std::stringstream in(bytes.substr(0, cut));
    EXPECT_THROW(read_tnsr(in), FormatError) << "cut at " << cut;
  }
}

TEST(Tnsr, ForeignMagicAndVersionRejected) {
  std::stringstream bad_magic(std::string("RSNT\x01\x00\x01\x01\x00\x00\x00", 11));
  EXPECT_THROW(read_tnsr(bad_magic), FormatError);
  std::stringstream bad_version(std::string("TNSR\x02\x00\x01\x01\x00\x00\x00", 11));
  try {
    read_tnsr(bad_version);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("offset"), std::string::npos);
  }
}
