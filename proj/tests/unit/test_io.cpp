#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "pcreg/io.hpp"
#include "pcreg/rng.hpp"

namespace {

using namespace pcreg;
namespace fs = std::filesystem;
using metrics::Image;

Image random_image(std::int64_t h, std::int64_t w, std::uint64_t seed) {
  Rng rng(seed);
  Image img(h, w);
  for (float& v : img.pixels) v = static_cast<float>(rng.uniform());
  return img;
}

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("pcreg_io_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

ModelConfig tiny(std::uint64_t seed = 1) {
  ModelConfig c;
  c.base_channels = 2;
  c.seed = seed;
  return c;
}

TEST(Pgm, RoundTripWithinHalfAStep) {
  const Image x = random_image(7, 9, 1);
  for (int bits : {8, 16}) {
    const double maxval = bits == 8 ? 255.0 : 65535.0;
    const Image y = io::decode_pgm(io::encode_pgm(x, bits));
    ASSERT_EQ(y.height, 7);
    ASSERT_EQ(y.width, 9);
    for (std::size_t i = 0; i < x.pixels.size(); ++i) {
      EXPECT_LE(std::abs(y.pixels[i] - x.pixels[i]), 0.5 / maxval + 1e-7);
    }
    EXPECT_EQ(io::encode_pgm(y, bits), io::encode_pgm(x, bits));
  }
}

TEST(Pgm, HeaderAndSampleOrder) {
  Image x(1, 2);
  x.pixels = {1.0f, 2.0f / 65535.0f};
  const std::string bytes = io::encode_pgm(x);
  EXPECT_EQ(bytes.substr(0, 15), "P5\n2 1\n65535\n\xff\xff");
  EXPECT_EQ(bytes.substr(15), std::string("\x00\x02", 2));
  Image clipped(1, 1);
  clipped.pixels = {1.5f};
  EXPECT_EQ(io::decode_pgm(io::encode_pgm(clipped, 8)).pixels[0], 1.0f);
}

TEST(Pgm, CommentsAreSkipped) {
  const std::string bytes = std::string("P5\n# made by hand\n2 1\n# max\n255\n") + std::string("\x00\xff", 2);
  const Image y = io::decode_pgm(bytes);
  EXPECT_EQ(y.pixels, (std::vector<float>{0.0f, 1.0f}));
}

TEST(Pgm, MalformedInputRejected) {
  EXPECT_THROW(io::decode_pgm("P2\n1 1\n255\n0"), io::FormatError);
  EXPECT_THROW(io::decode_pgm("P5\n2 2\n255\n\x01"), io::FormatError);
  EXPECT_THROW(io::decode_pgm("P5\n0 2\n255\n"), io::FormatError);
  EXPECT_THROW(io::decode_pgm("P5\n1 1\n0\n\x00"), io::FormatError);
  EXPECT_THROW(io::decode_pgm(std::string("P5\n1 1\n100\n\xc8", 12)), io::FormatError);
  EXPECT_THROW(io::load_pgm("/nonexistent/file.pgm"), io::FormatError);
}

TEST(Checkpoint, EncodeDecodeEncodeIsByteExact) {
  PCRegNet m(tiny());
  AdamConfig adam;
  adam.beta2 = 0.99;
  const std::string a = io::encode_checkpoint(io::make_checkpoint(m, adam));
  const io::Checkpoint decoded = io::decode_checkpoint(a);
  EXPECT_EQ(decoded.model, m.config());
  EXPECT_EQ(decoded.adam, adam);
  EXPECT_EQ(io::encode_checkpoint(decoded), a);
  PCRegNet copy = io::model_from_checkpoint(decoded);
  EXPECT_EQ(io::encode_checkpoint(io::make_checkpoint(copy, adam)), a);
}

TEST(Checkpoint, IncludesNormalizationBuffers) {
  PCRegNet m(tiny());
  const io::Checkpoint c = io::make_checkpoint(m);
  const ParameterList all = m.all_parameters();
  EXPECT_EQ(c.tensors.size(), all.trainable.size() + all.buffers.size());
  bool running = false;
  for (const auto& t : c.tensors) running = running || t.name.find("running") != std::string::npos;
  EXPECT_TRUE(running);
}

TEST(Checkpoint, FlippedByteFailsIntegrityCheck) {
  PCRegNet m(tiny());
  std::string bytes = io::encode_checkpoint(io::make_checkpoint(m));
  for (std::size_t pos : {std::size_t{10}, bytes.size() / 2, bytes.size() - 1}) {
    std::string bad = bytes;
    bad[pos] = static_cast<char>(bad[pos] ^ 0x10);
    EXPECT_THROW(io::decode_checkpoint(bad), io::FormatError) << "byte " << pos;
  }
  EXPECT_THROW(io::decode_checkpoint(bytes.substr(0, bytes.size() - 9)), io::FormatError);
  EXPECT_THROW(io::decode_checkpoint("XXXX"), io::FormatError);
}

TEST(Checkpoint, MismatchedConfigLeavesModelUntouched) {
  PCRegNet source(tiny(1));
  ModelConfig other = tiny(2);
  other.ablation = AblationConfig::from_name("no-injection");
  PCRegNet target(other);
  const std::string before = io::encode_checkpoint(io::make_checkpoint(target));
  EXPECT_THROW(io::apply_checkpoint(io::make_checkpoint(source), target), io::FormatError);
  EXPECT_EQ(io::encode_checkpoint(io::make_checkpoint(target)), before);

  io::Checkpoint c = io::make_checkpoint(target);
  c.tensors.back().dims[0] += 1;
  EXPECT_THROW(io::apply_checkpoint(c, target), io::FormatError);
  EXPECT_EQ(io::encode_checkpoint(io::make_checkpoint(target)), before);
}

TEST(Checkpoint, DuplicateTensorNamesRejected) {
  PCRegNet m(tiny());
  io::Checkpoint c = io::make_checkpoint(m);
  c.tensors[1].name = c.tensors[0].name;
  c.tensors[1].dims = c.tensors[0].dims;
  c.tensors[1].values = c.tensors[0].values;
  EXPECT_THROW(io::decode_checkpoint(io::encode_checkpoint(c)), io::FormatError);
}

TEST(Checkpoint, SaveAndLoadFromDisk) {
  const fs::path dir = scratch_dir("ckpt");
  PCRegNet m(tiny(7));
  io::save_checkpoint(dir / "m.pcrg", m);
  EXPECT_EQ(io::read_file(dir / "m.pcrg"), io::encode_checkpoint(io::make_checkpoint(m)));
  EXPECT_EQ(io::load_checkpoint(dir / "m.pcrg").model, m.config());
}

TEST(Report, IdenticalPairExample) {
  metrics::MetricsReport r;
  const Image x = random_image(16, 16, 2);
  r.per_pair.push_back(metrics::evaluate_pair("p0", x, x));
  const std::string json = io::format_report(r);
  EXPECT_NE(json.find("\"ncc\": 1.000000"), std::string::npos) << json;
  EXPECT_NE(json.find("\"ssim\": 1.000000"), std::string::npos) << json;
  EXPECT_NE(json.find("\"psnr_db\": 100.000000"), std::string::npos) << json;
  const io::ParsedReport p = io::parse_report(json);
  EXPECT_EQ(p.n_pairs, 1);
  EXPECT_EQ(p.ncc, 1000000);
  EXPECT_EQ(p.psnr_db, 100000000);
  EXPECT_FALSE(p.has_temporal);
}

TEST(Report, KeyOrderAndDeterminism) {
  metrics::MetricsReport r;
  r.per_pair = {{"a\"b", 0.5, 0.25, 12.0}, {"c", -0.0, 0.1, 3.0}};
  r.temporal = metrics::TemporalMetrics{0.9640004, 0.9630006, 0.0009998};
  const std::string json = io::format_report(r);
  EXPECT_EQ(json, io::format_report(r));
  std::size_t last = 0;
  for (const char* key : {"\"n_pairs\"", "\"ncc\"", "\"ssim\"", "\"psnr_db\"", "\"tncc\"",
                          "\"tncc_ref\"", "\"tncg\"", "\"pairs\""}) {
    const std::size_t at = json.find(key);
    ASSERT_NE(at, std::string::npos) << key;
    EXPECT_GE(at, last) << key;
    last = at;
  }
  EXPECT_EQ(json.find("-0.000000"), std::string::npos);
  EXPECT_NE(json.find("a\\\"b"), std::string::npos);
}

TEST(Report, PrintedGapIsConsistentAfterRoundTrip) {
  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    metrics::MetricsReport r;
    r.per_pair = {{"x", 0.5, 0.5, 20}};
    const double t = rng.uniform(0.8, 1.0), ref = rng.uniform(0.8, 1.0);
    r.temporal = metrics::TemporalMetrics{t, ref, metrics::tncg(t, ref)};
    const io::ParsedReport p = io::parse_report(io::format_report(r));
    ASSERT_TRUE(p.has_temporal);
    EXPECT_EQ(p.tncg, std::llabs(p.tncc - p.tncc_ref));
    EXPECT_EQ(p.tncc, std::llround(t * 1e6));
  }
}

TEST(Manifest, RoundTripAndSplits) {
  const fs::path dir = scratch_dir("manifest");
  std::vector<io::ManifestEntry> entries;
  for (std::int64_t i = 0; i < 10; ++i) {
    const std::string stem = "pair_" + std::to_string(i);
    entries.push_back({i, io::split_for_index(i, 10), stem + "_moving.pgm", stem + "_fixed.pgm", ""});
    io::save_pgm(dir / entries.back().moving, random_image(8, 8, static_cast<std::uint64_t>(i)));
    io::save_pgm(dir / entries.back().fixed, random_image(8, 8, static_cast<std::uint64_t>(i + 50)));
  }
  io::write_manifest(dir, entries);
  const auto back = io::read_manifest(dir);
  ASSERT_EQ(back.size(), entries.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    EXPECT_EQ(back[i].index, entries[i].index);
    EXPECT_EQ(back[i].split, entries[i].split);
    EXPECT_EQ(back[i].moving, entries[i].moving);
  }
  const Dataset val = io::load_split(dir, "val");
  ASSERT_EQ(val.size(), 1u);
  EXPECT_EQ(val[0].id, "8");
  EXPECT_EQ(io::load_split(dir, "train").size(), 8u);
  EXPECT_EQ(io::load_split(dir, "test").size(), 1u);
}

TEST(Manifest, EightyTenTen) {
  int counts[3] = {0, 0, 0};
  for (std::int64_t i = 0; i < 160; ++i) {
    const std::string s = io::split_for_index(i, 160);
    counts[s == "train" ? 0 : s == "val" ? 1 : 2]++;
  }
  EXPECT_EQ(counts[0], 128);
  EXPECT_EQ(counts[1], 16);
  EXPECT_EQ(counts[2], 16);
}

TEST(Files, AtomicWriteLeavesNoTemporary) {
  const fs::path dir = scratch_dir("atomic");
  io::write_file_atomic(dir / "a.txt", "hello");
  io::write_file_atomic(dir / "a.txt", "world");
  EXPECT_EQ(io::read_file(dir / "a.txt"), "world");
  int n = 0;
  for ([[maybe_unused]] const auto& e : fs::directory_iterator(dir)) ++n;
  EXPECT_EQ(n, 1);
  EXPECT_THROW(io::write_file_atomic(dir / "missing" / "a.txt", "x"), io::FormatError);
  EXPECT_THROW(io::read_file(dir / "nope"), io::FormatError);
}

}  // namespace
