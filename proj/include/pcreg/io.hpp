#pragma once

// File formats: binary PGM images, PCRG checkpoints, metric reports and
// dataset manifests. Every writer goes through a temporary file and an
// atomic rename, so a failed write never leaves a partial file behind.

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "pcreg/metrics.hpp"
#include "pcreg/model.hpp"
#include "pcreg/trainer.hpp"

namespace pcreg::io {

namespace fs = std::filesystem;

/// Errors reading or writing files (bad format, corruption, I/O failure).
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void write_file_atomic(const fs::path& path, std::string_view bytes);
std::string read_file(const fs::path& path);

// ---------------------------------------------------------------------------
// PGM (P5). 16-bit samples are big-endian as the format defines.

/// Encodes x (values clamped to [0, 1]) with maxval 255 or 65535.
std::string encode_pgm(const metrics::Image& x, int bits = 16);
metrics::Image decode_pgm(std::string_view bytes);
void save_pgm(const fs::path& path, const metrics::Image& x, int bits = 16);
metrics::Image load_pgm(const fs::path& path);

// ---------------------------------------------------------------------------
// Checkpoints

constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointTensor {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> values;
};

struct Checkpoint {
  ModelConfig model;
  AdamConfig adam;
  std::vector<CheckpointTensor> tensors;
};

/// All parameters and normalization buffers of `model`.
Checkpoint make_checkpoint(const PCRegNet& model, const AdamConfig& adam = {});
std::string encode_checkpoint(const Checkpoint& ckpt);
/// Verifies magic, version and CRC before parsing.
Checkpoint decode_checkpoint(std::string_view bytes);

void save_checkpoint(const fs::path& path, const PCRegNet& model, const AdamConfig& adam = {});
Checkpoint load_checkpoint(const fs::path& path);

/// Copies every tensor into `model`. The config must match and the tensor
/// set must match exactly; nothing is modified on mismatch.
void apply_checkpoint(const Checkpoint& ckpt, PCRegNet& model);
PCRegNet model_from_checkpoint(const Checkpoint& ckpt);

// ---------------------------------------------------------------------------
// Reports

/// JSON object with keys n_pairs, ncc, ssim, psnr_db, [tncc, tncc_ref, tncg,]
/// pairs, in that order, floats printed with 6 decimals. The printed tncg is
/// the difference of the printed tncc values, so the file is self-consistent.
std::string format_report(const metrics::MetricsReport& report);
void write_report(const fs::path& path, const metrics::MetricsReport& report);

/// Fixed-point view of a report read back from disk: every float as an
/// exact integer count of 1e-6 units.
struct ParsedReport {
  std::int64_t n_pairs = 0;
  std::int64_t ncc = 0, ssim = 0, psnr_db = 0;
  bool has_temporal = false;
  std::int64_t tncc = 0, tncc_ref = 0, tncg = 0;
};
ParsedReport parse_report(std::string_view json);

// ---------------------------------------------------------------------------
// Datasets

struct ManifestEntry {
  std::int64_t index = 0;
  std::string split;  // train, val, test or scan
  std::string moving;
  std::string fixed;
  std::string truth;  // scan datasets only
};

std::string split_for_index(std::int64_t index, std::int64_t count);
void write_manifest(const fs::path& dir, const std::vector<ManifestEntry>& entries);
std::vector<ManifestEntry> read_manifest(const fs::path& dir);

/// Samples of one split, in manifest order, ids "index".
Dataset load_split(const fs::path& dir, const std::string& split);

struct ScanData {
  std::vector<metrics::Image> moving;
  std::vector<metrics::Image> fixed;
  std::vector<metrics::Image> truth;
};
ScanData load_scan(const fs::path& dir);

}  // namespace pcreg::io
