#include <gtest/gtest.h>

#include <cmath>

#include "pcreg/metrics.hpp"
#include "pcreg/synthdata.hpp"

namespace {

using namespace pcreg;
using synth::GeneratorConfig;

bool in_unit_range(const metrics::Image& img) {
  for (float v : img.pixels) {
    if (!(v >= 0.0f && v <= 1.0f)) return false;
  }
  return true;
}

TEST(Pairs, ZeroAmplitudeMovingEqualsFixed) {
  for (std::uint64_t i = 0; i < 20; ++i) {
    const auto p = synth::generate_pair(GeneratorConfig::zero_amplitude(32, 40, 5), i);
    EXPECT_EQ(p.moving, p.fixed) << "index " << i;
  }
}

TEST(Pairs, SameSeedAndIndexGiveIdenticalPairs) {
  GeneratorConfig g;
  g.seed = 11;
  const auto a = synth::generate_pair(g, 3), b = synth::generate_pair(g, 3);
  EXPECT_EQ(a.moving, b.moving);
  EXPECT_EQ(a.fixed, b.fixed);
  EXPECT_EQ(a.truth.displacement_x, b.truth.displacement_x);
  // Independent of generation order: index 3 after index 7.
  synth::generate_pair(g, 7);
  EXPECT_EQ(synth::generate_pair(g, 3).moving, a.moving);
  EXPECT_NE(synth::generate_pair(g, 4).fixed, a.fixed);
  g.seed = 12;
  EXPECT_NE(synth::generate_pair(g, 3).fixed, a.fixed);
}

TEST(Pairs, DefaultsAreUnregisteredButCorrelated) {
  int inside = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    GeneratorConfig g;
    g.seed = seed;
    const auto p = synth::generate_pair(g, 0);
    const double r = metrics::ncc(p.moving, p.fixed);
    inside += (r > 0.0 && r < 1.0) ? 1 : 0;
  }
  EXPECT_GE(inside, 95);
}

TEST(Pairs, ParametersStayInRangeAndImagesInUnitInterval) {
  GeneratorConfig g;
  g.seed = 2;
  for (std::uint64_t i = 0; i < 50; ++i) {
    const auto p = synth::generate_pair(g, i);
    const auto& t = p.truth;
    EXPECT_LE(std::abs(t.rotation_deg), 5.0);
    EXPECT_LE(std::abs(t.translation_x), 3.0);
    EXPECT_LE(std::abs(t.translation_y), 3.0);
    EXPECT_GE(t.scale, 0.95);
    EXPECT_LE(t.scale, 1.05);
    EXPECT_LE(t.elastic_amplitude, 2.0);
    EXPECT_GE(t.gamma, 0.7);
    EXPECT_LE(t.gamma, 1.4);
    EXPECT_GE(t.contrast, 0.8);
    EXPECT_LE(t.contrast, 1.2);
    EXPECT_LE(std::abs(t.bias), 0.1);
    EXPECT_GE(t.noise_sigma, 0.0);
    EXPECT_LE(t.noise_sigma, 0.02);
    EXPECT_TRUE(in_unit_range(p.moving));
    EXPECT_TRUE(in_unit_range(p.fixed));
    EXPECT_EQ(p.moving.height, 64);
    EXPECT_EQ(p.moving.width, 64);
  }
}

// Pooled over all pixels of 100 pairs; single pairs with a large rotation
// and translation can have most of their corners beyond 5 px.
TEST(Pairs, MostDisplacementsAreUnderFivePixels) {
  GeneratorConfig g;
  g.seed = 0;
  std::size_t under = 0, total = 0;
  for (std::uint64_t i = 0; i < 100; ++i) {
    const auto p = synth::generate_pair(g, i);
    for (std::size_t k = 0; k < p.truth.displacement_x.size(); ++k) {
      const double d = std::hypot(p.truth.displacement_x[k], p.truth.displacement_y[k]);
      under += d < 5.0 ? 1 : 0;
      ++total;
    }
  }
  EXPECT_GE(static_cast<double>(under) / static_cast<double>(total), 0.90);
}

TEST(Pairs, InvalidConfigRejected) {
  GeneratorConfig g;
  g.max_rotation_deg = -1;
  EXPECT_THROW(g.validate(), std::invalid_argument);
  g = GeneratorConfig{};
  g.min_scale = 1.2;
  EXPECT_THROW(g.validate(), std::invalid_argument);
  g = GeneratorConfig{};
  g.height = 0;
  EXPECT_THROW(g.validate(), std::invalid_argument);
}

TEST(Scene, NormalizedToUnitRange) {
  Rng rng(4);
  const auto img = synth::render_scene(32, 48, 6, 4, rng);
  float lo = 1, hi = 0;
  for (float v : img.pixels) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  EXPECT_EQ(lo, 0.0f);
  EXPECT_EQ(hi, 1.0f);
}

TEST(Sampling, BilinearAndEdgeClamp) {
  metrics::Image img(2, 2);
  img.pixels = {0, 1, 2, 3};
  EXPECT_FLOAT_EQ(synth::sample_bilinear(img, 0.5, 0.5), 1.5f);
  EXPECT_FLOAT_EQ(synth::sample_bilinear(img, -3, -3), 0.0f);
  EXPECT_FLOAT_EQ(synth::sample_bilinear(img, 5, 5), 3.0f);
  EXPECT_FLOAT_EQ(synth::sample_bilinear(img, 1, 0.25), 2.25f);
}

TEST(Scan, NoDistortionReconstructsTruth) {
  synth::ScanSequenceConfig c;
  c.fixed_distortion = true;
  c.shift = 0.0;
  c.intensity_scale = 1.0;
  c.seed = 3;
  const auto seq = synth::generate_scan_sequence(c);
  ASSERT_EQ(seq.truth.size(), 8u);
  for (std::size_t k = 0; k < seq.truth.size(); ++k) {
    EXPECT_EQ(seq.fixed[k].width, 32);
    EXPECT_EQ(metrics::merge_frame(seq.fixed[k], seq.moving[k]), seq.truth[k]) << "frame " << k;
  }
}

TEST(Scan, DefaultsMisalignEvenColumns) {
  double mean = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    synth::ScanSequenceConfig c;
    c.seed = seed;
    const auto seq = synth::generate_scan_sequence(c);
    EXPECT_GE(seq.shift, 0.5);
    EXPECT_LE(seq.shift, 2.0);
    EXPECT_GE(seq.intensity_scale, 0.7);
    EXPECT_LE(seq.intensity_scale, 0.95);
    for (std::size_t k = 1; k < seq.drift_x.size(); ++k) {
      EXPECT_LE(std::hypot(seq.drift_x[k] - seq.drift_x[k - 1], seq.drift_y[k] - seq.drift_y[k - 1]),
                1.0 + 1e-12);
    }
    double r = 0;
    for (std::size_t k = 0; k < seq.fixed.size(); ++k) r += metrics::ncc(seq.moving[k], seq.fixed[k]);
    mean += r / static_cast<double>(seq.fixed.size()) / 10.0;

    metrics::FrameSequence odd;
    odd.source = metrics::FrameSequence::Source::kOddOnly;
    odd.frames = seq.fixed;
    EXPECT_LE(metrics::tncc(odd), 1.0);
  }
  EXPECT_LT(mean, 0.9);
}

TEST(Scan, DeterministicPerSeed) {
  synth::ScanSequenceConfig c;
  c.seed = 9;
  const auto a = synth::generate_scan_sequence(c), b = synth::generate_scan_sequence(c);
  EXPECT_EQ(a.moving, b.moving);
  EXPECT_EQ(a.truth, b.truth);
  c.width = 63;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

}  // namespace
