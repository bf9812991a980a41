#include <gtest/gtest.h>

#include <cmath>

#include "ddrnet/ddr.hpp"
#include "ddrnet/nn/gradcheck.hpp"

using namespace ddrnet;
using namespace ddrnet::nn;

namespace {

void zero_all(ParameterStore& store) {
  for (auto& p : store.parameters()) p.var->value.fill(0.0);
}

// Full k^3 kernel equivalent to applying w-, then h-, then d-convolutions:
// K[o,i,a,b,c] = sum_{m,n} Wd[o,m,a] * Wh[m,n,b] * Ww[n,i,c].
Tensor compose_kernels(const Tensor& ww, const Tensor& wh, const Tensor& wd, std::size_t ch, std::size_t k) {
  Tensor full({ch, ch, k, k, k});
  for (std::size_t o = 0; o < ch; ++o)
    for (std::size_t i = 0; i < ch; ++i)
      for (std::size_t a = 0; a < k; ++a)
        for (std::size_t b = 0; b < k; ++b)
          for (std::size_t c = 0; c < k; ++c) {
            double s = 0.0;
            for (std::size_t m = 0; m < ch; ++m)
              for (std::size_t n = 0; n < ch; ++n)
                s += wd[(o * ch + m) * k + a] * wh[(m * ch + n) * k + b] * ww[(n * ch + i) * k + c];
            full.at({o, i, a, b, c}) = s;
          }
  return full;
}

}  // namespace

TEST(BasicDDR, ZeroBranchIsIdentity) {
  for (int dims : {2, 3}) {
    Rng rng(1);
    ParameterStore store;
    DDRBlockConfig cfg;
    cfg.channels = 4;
    cfg.spatial_dims = dims;
    BasicDDR block(store, "b", cfg, rng);
    zero_all(store);
    Tensor x = dims == 3 ? random_tensor({1, 4, 3, 4, 5}, rng) : random_tensor({2, 4, 5, 6}, rng);
    EXPECT_EQ(block.forward(constant(x))->value, x);
  }
}

TEST(BasicDDR, DecomposedWeightsAreOneThirdOfFullKernel) {
  Rng rng(2);
  ParameterStore store;
  DDRBlockConfig cfg;
  cfg.channels = 4;
  BasicDDR block(store, "b", cfg, rng);
  EXPECT_EQ(store.scalar_count(), 144u);
  const ConvSpec full = ConvSpec::same(3, 4, 4, {3, 3, 3}, 1, false);
  EXPECT_EQ(full.param_count(), 432u);
  EXPECT_EQ(3 * store.scalar_count(), full.param_count());
}

TEST(BasicDDR, OneThirdRatioHoldsForLargerKernels) {
  Rng rng(3);
  for (std::size_t k : {3u, 5u, 7u}) {
    for (std::size_t c : {1u, 3u, 8u}) {
      ParameterStore store;
      DDRBlockConfig cfg;
      cfg.channels = c;
      cfg.kernel = k;
      BasicDDR block(store, "b", cfg, rng);
      const ConvSpec full = ConvSpec::same(3, c, c, {k, k, k}, 1, false);
      // Branch of three 1-D convs: 3 * c*c*k.  One full conv: c*c*k^3.
      EXPECT_EQ(store.scalar_count() * k * k, 3 * full.param_count()) << "k=" << k << " c=" << c;
    }
  }
}

TEST(BasicDDR, LinearBranchEqualsComposedFullConvolution) {
  Rng rng(4);
  for (std::size_t ch : {1u, 3u}) {
    ParameterStore store;
    DDRBlockConfig cfg;
    cfg.channels = ch;
    cfg.activation = false;
    cfg.dilation = ch;  // exercise dilation too
    BasicDDR block(store, "b", cfg, rng);
    const auto& convs = block.convs();
    ASSERT_EQ(convs.size(), 3u);
    Tensor full_w = compose_kernels(convs[0].weight()->value, convs[1].weight()->value,
                                    convs[2].weight()->value, ch, 3);
    const ConvSpec full = ConvSpec::same(3, ch, ch, {3, 3, 3}, cfg.dilation, false);
    for (int trial = 0; trial < 5; ++trial) {
      Tensor x = random_tensor({1, ch, 5, 6, 7}, rng);
      Tensor y = block.forward(constant(x))->value;
      Tensor expect = elementwise_add(x, conv3d_forward(x, full, full_w, nullptr));
      for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], expect[i], 1e-12);
    }
  }
}

TEST(BasicDDR, ChannelMismatchRejected) {
  Rng rng(5);
  ParameterStore store;
  BasicDDR block(store, "b", DDRBlockConfig{}, rng);
  EXPECT_THROW(block.forward(constant(Tensor({1, 3, 4, 4, 4}))), ShapeError);
}

TEST(BasicDDR, GradcheckBothDimensionalities) {
  for (int dims : {2, 3}) {
    Rng rng(6);
    ParameterStore store;
    DDRBlockConfig cfg;
    cfg.channels = 3;
    cfg.spatial_dims = dims;
    cfg.dilation = 2;
    cfg.bias = true;
    BasicDDR block(store, "b", cfg, rng);
    Var x = variable(dims == 3 ? random_tensor({1, 3, 4, 5, 4}, rng) : random_tensor({1, 3, 6, 5}, rng));
    auto inputs = store.parameters();
    inputs.push_back({"x", x});
    auto fwd = [&] { return scalarize(block.forward(x), 3); };
    EXPECT_LE(gradcheck(fwd, inputs, {.probes = 60}).max_rel_error, 1e-4);
  }
}

TEST(BottleneckDDR, ZeroWeightsIdentityAndParameterCount) {
  Rng rng(7);
  ParameterStore store;
  DDRBlockConfig cfg;
  cfg.channels = 16;
  cfg.reduction = 4;
  BottleneckDDR block(store, "bt", cfg, rng);
  // Brute-force enumeration of learnable scalars vs 16*4 + 3*(4*4*3) + 4*16.
  std::size_t enumerated = 0;
  for (const auto& p : store.parameters()) enumerated += p.var->value.size();
  EXPECT_EQ(enumerated, 272u);
  zero_all(store);
  Tensor x = random_tensor({1, 16, 4, 4, 4}, rng);
  EXPECT_EQ(block.forward(constant(x))->value, x);
}

TEST(BottleneckDDR, ReductionMustDivideChannels) {
  Rng rng(8);
  ParameterStore store;
  DDRBlockConfig cfg;
  cfg.channels = 10;
  cfg.reduction = 4;
  EXPECT_THROW(BottleneckDDR(store, "bt", cfg, rng), ConfigError);
}

TEST(BottleneckDDR, Gradcheck) {
  Rng rng(9);
  ParameterStore store;
  DDRBlockConfig cfg;
  cfg.channels = 8;
  cfg.reduction = 4;
  cfg.dilation = 2;
  cfg.bias = true;
  BottleneckDDR block(store, "bt", cfg, rng);
  Var x = variable(random_tensor({1, 8, 5, 5, 5}, rng));
  auto inputs = store.parameters();
  inputs.push_back({"x", x});
  auto fwd = [&] { return scalarize(block.forward(x), 4); };
  GradcheckResult r = gradcheck(fwd, inputs, {.probes = 100, .step = 1e-5});
  EXPECT_LE(r.max_rel_error, 1e-4) << r.worst;
}

TEST(BottleneckDDR, DilationPreservesShapeAndCostsNoParameters) {
  Rng rng(10);
  std::size_t reference = 0;
  for (std::size_t d : {1u, 2u, 3u}) {
    ParameterStore store;
    DDRBlockConfig cfg;
    cfg.channels = 8;
    cfg.dilation = d;
    BottleneckDDR block(store, "bt", cfg, rng);
    if (d == 1) reference = store.scalar_count();
    EXPECT_EQ(store.scalar_count(), reference);
    Tensor x = random_tensor({1, 8, 3, 7, 5}, rng);
    EXPECT_EQ(block.forward(constant(x))->value.shape(), x.shape());
  }
}

TEST(Downsample, ShapesZeroBranchAndParams) {
  Rng rng(11);
  ParameterStore store;
  DownsampleBlock down(store, "down", 4, 8, true, true, rng);
  EXPECT_EQ(store.scalar_count(), 20u);
  Tensor x = random_tensor({1, 4, 8, 8, 8}, rng);
  Tensor y = down.forward(constant(x))->value;
  EXPECT_EQ(y.shape(), (Shape{1, 8, 4, 4, 4}));
  zero_all(store);
  y = down.forward(constant(x))->value;
  Tensor pooled = maxpool_forward(x, {2, 2, 2}, {2, 2, 2}).values;
  EXPECT_EQ(slice_axis(y, 1, 0, 4), pooled);
  EXPECT_EQ(max_abs(slice_axis(y, 1, 4, 4)), 0.0);
}

TEST(Downsample, RejectsOddSizesAndNonIncreasingChannels) {
  Rng rng(12);
  ParameterStore store;
  DownsampleBlock down(store, "down", 2, 4, true, true, rng);
  EXPECT_THROW(down.forward(constant(Tensor({1, 2, 4, 5, 4}))), ShapeError);
  EXPECT_THROW(DownsampleBlock(store, "bad", 4, 4, true, true, rng), ConfigError);
}

TEST(Downsample, Gradcheck) {
  Rng rng(13);
  ParameterStore store;
  DownsampleBlock down(store, "down", 2, 5, true, true, rng);
  Var x = variable(random_tensor({1, 2, 4, 4, 4}, rng));
  auto inputs = store.parameters();
  inputs.push_back({"x", x});
  auto fwd = [&] { return scalarize(down.forward(x), 8); };
  EXPECT_LE(gradcheck(fwd, inputs, {.probes = 60}).max_rel_error, 1e-4);
}

TEST(LwAspp, ShapeAndRateBound) {
  Rng rng(14);
  ParameterStore store;
  LwAsppConfig cfg;
  cfg.channels = 8;
  cfg.rates = {1, 2, 3};
  cfg.out_channels = 8;
  LwAspp aspp(store, "aspp", cfg, rng);
  EXPECT_EQ(aspp.fusion().spec().in_channels, 24u);
  Tensor y = aspp.forward(constant(random_tensor({1, 8, 8, 8, 8}, rng)))->value;
  EXPECT_EQ(y.shape(), (Shape{1, 8, 8, 8, 8}));
  EXPECT_THROW(aspp.forward(constant(Tensor({1, 8, 6, 8, 8}))), ShapeError);
}

TEST(LwAspp, ZeroBranchesWithAveragingFusionIsIdentity) {
  Rng rng(15);
  ParameterStore store;
  LwAsppConfig cfg;
  cfg.channels = 4;
  cfg.out_channels = 4;
  LwAspp aspp(store, "aspp", cfg, rng);
  zero_all(store);
  Tensor& fw = aspp.fusion().weight()->value;  // [4, 12, 1, 1, 1]
  const std::size_t rates = cfg.rates.size();
  for (std::size_t o = 0; o < 4; ++o) {
    for (std::size_t j = 0; j < rates; ++j) fw[o * 4 * rates + j * 4 + o] = 1.0 / static_cast<double>(rates);
  }
  Tensor x = random_tensor({1, 4, 7, 7, 7}, rng);
  Tensor y = aspp.forward(constant(x))->value;
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(y[i], x[i], 1e-15);
}

TEST(LwAspp, FarCheaperThanFullKernelAspp) {
  Rng rng(16);
  ParameterStore store;
  LwAsppConfig cfg;
  cfg.channels = 16;
  cfg.out_channels = 16;
  LwAspp aspp(store, "aspp", cfg, rng);
  // Same rates and channels, each branch one dilated 3x3x3 conv.
  std::size_t full = ConvSpec::pointwise(3, 16 * 3, 16, true).param_count();
  for (std::size_t r : cfg.rates) full += ConvSpec::same(3, 16, 16, {3, 3, 3}, r, false).param_count();
  EXPECT_LT(2 * store.scalar_count(), full);
}

TEST(LwAspp, Gradcheck) {
  Rng rng(17);
  ParameterStore store;
  LwAsppConfig cfg;
  cfg.channels = 4;
  cfg.rates = {1, 2};
  cfg.out_channels = 3;
  LwAspp aspp(store, "aspp", cfg, rng);
  Var x = variable(random_tensor({1, 4, 5, 5, 5}, rng));
  auto inputs = store.parameters();
  inputs.push_back({"x", x});
  auto fwd = [&] { return scalarize(aspp.forward(x), 11); };
  EXPECT_LE(gradcheck(fwd, inputs, {.probes = 80}).max_rel_error, 1e-4);
}
