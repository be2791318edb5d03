#include "pcreg/io.hpp"

#include <unistd.h>
#include <zlib.h>

#include <algorithm>
#include <cctype>

#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "json.hpp"

namespace pcreg::io {
namespace {

// Little-endian byte sink and source.
class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
  void u16(std::uint16_t v) { put(v, 2); }
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void bytes(std::string_view s) { out_.append(s); }
  std::string& str() { return out_; }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  std::string out_;
};

class Reader {
 public:
  explicit Reader(std::string_view in) : in_(in) {}
  std::uint8_t u8() { return static_cast<std::uint8_t>(get(1)); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(get(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string_view bytes(std::size_t n) {
    need(n);
    std::string_view s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return in_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (in_.size() - pos_ < n) throw FormatError("checkpoint: unexpected end of data");
  }
  std::uint64_t get(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in_[pos_ + i])) << (8 * i);
    }
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  std::string_view in_;
  std::size_t pos_ = 0;
};

std::uint32_t crc32_of(std::string_view bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks.
  const auto* p = reinterpret_cast<const Bytef*>(bytes.data());
  std::size_t left = bytes.size();
  while (left > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(left, 1u << 30));
    crc = crc32(crc, p, chunk);
    p += chunk;
    left -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

std::uint8_t ablation_flags(const AblationConfig& a) {
  return static_cast<std::uint8_t>((a.use_contrast ? 1 : 0) | (a.use_injection ? 2 : 0) |
                                   (a.refinement_stage ? 4 : 0));
}

std::string fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  // Avoid "-0.000000".
  if (std::string_view(buf) == "-0.000000") return "0.000000";
  return buf;
}

std::int64_t micro(double v) { return std::llround(v * 1e6); }

std::string micro_str(std::int64_t m) {
  const bool neg = m < 0;
  const std::int64_t a = neg ? -m : m;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s%lld.%06lld", neg ? "-" : "", static_cast<long long>(a / 1000000),
                static_cast<long long>(a % 1000000));
  return buf;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

void write_file_atomic(const fs::path& path, std::string_view bytes) {
  const fs::path tmp = path.string() + ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot open " + tmp.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) {
      out.close();
      std::error_code ec;
      fs::remove(tmp, ec);
      throw FormatError("failed writing " + path.string());
    }
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw FormatError("cannot move " + tmp.string() + " to " + path.string());
  }
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

// ---------------------------------------------------------------------------

std::string encode_pgm(const metrics::Image& x, int bits) {
  if (bits != 8 && bits != 16) throw FormatError("PGM depth must be 8 or 16 bits");
  const int maxval = bits == 8 ? 255 : 65535;
  std::string out = "P5\n" + std::to_string(x.width) + " " + std::to_string(x.height) + "\n" +
                    std::to_string(maxval) + "\n";
  for (float v : x.pixels) {
    const double c = std::clamp(static_cast<double>(v), 0.0, 1.0);
    const auto q = static_cast<unsigned>(std::lround(c * maxval));
    if (bits == 16) out.push_back(static_cast<char>(q >> 8));
    out.push_back(static_cast<char>(q & 0xFF));
  }
  return out;
}

metrics::Image decode_pgm(std::string_view bytes) {
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto number = [&]() -> long {
    skip_space();
    long v = 0;
    std::size_t digits = 0;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
      v = v * 10 + (bytes[pos] - '0');
      if (v > 1'000'000'000) throw FormatError("PGM: header value out of range");
      ++pos;
      ++digits;
    }
    if (digits == 0) throw FormatError("PGM: malformed header");
    return v;
  };
  if (bytes.substr(0, 2) != "P5") throw FormatError("PGM: not a binary greymap (P5)");
  pos = 2;
  const long width = number();
  const long height = number();
  const long maxval = number();
  if (width < 1 || height < 1 || maxval < 1 || maxval > 65535) {
    throw FormatError("PGM: invalid width, height or maxval");
  }
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) {
    throw FormatError("PGM: malformed header");
  }
  ++pos;
  const std::size_t bpp = maxval > 255 ? 2 : 1;
  const auto n = static_cast<std::size_t>(width * height);
  if (bytes.size() - pos < n * bpp) throw FormatError("PGM: truncated pixel data");
  metrics::Image img(height, width);
  for (std::size_t i = 0; i < n; ++i) {
    unsigned v = static_cast<unsigned char>(bytes[pos + i * bpp]);
    if (bpp == 2) v = (v << 8) | static_cast<unsigned char>(bytes[pos + i * bpp + 1]);
    if (v > static_cast<unsigned>(maxval)) throw FormatError("PGM: sample exceeds maxval");
    img.pixels[i] = static_cast<float>(static_cast<double>(v) / static_cast<double>(maxval));
  }
  return img;
}

void save_pgm(const fs::path& path, const metrics::Image& x, int bits) {
  write_file_atomic(path, encode_pgm(x, bits));
}

metrics::Image load_pgm(const fs::path& path) {
  try {
    return decode_pgm(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------

Checkpoint make_checkpoint(const PCRegNet& model, const AdamConfig& adam) {
  Checkpoint ckpt;
  ckpt.model = model.config();
  ckpt.adam = adam;
  const ParameterList all = model.all_parameters();
  for (const auto* group : {&all.trainable, &all.buffers}) {
    for (const NamedTensor& t : *group) {
      auto data = t.tensor.data();
      ckpt.tensors.push_back({t.name, t.dims(), std::vector<float>(data.begin(), data.end())});
    }
  }
  return ckpt;
}

std::string encode_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  w.bytes("PCRG");
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(ckpt.model.base_channels));
  w.u8(ablation_flags(ckpt.model.ablation));
  w.f64(ckpt.model.ablation.aux_gamma);
  w.u64(ckpt.model.seed);
  w.f64(ckpt.adam.beta1);
  w.f64(ckpt.adam.beta2);
  w.f64(ckpt.adam.eps);
  w.u32(static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& t : ckpt.tensors) {
    if (t.name.size() > 0xFFFF) throw FormatError("checkpoint: tensor name too long");
    w.u16(static_cast<std::uint16_t>(t.name.size()));
    w.bytes(t.name);
    w.u8(static_cast<std::uint8_t>(t.dims.size()));
    for (std::uint32_t d : t.dims) w.u32(d);
    for (float v : t.values) w.f32(v);
  }
  const std::uint32_t crc = crc32_of(w.str());
  w.u32(crc);
  return std::move(w.str());
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  if (bytes.size() < 8 || bytes.substr(0, 4) != "PCRG") {
    throw FormatError("checkpoint: bad magic (not a PCRG file)");
  }
  const std::string_view body = bytes.substr(0, bytes.size() - 4);
  Reader tail(bytes.substr(bytes.size() - 4));
  const std::uint32_t stored = tail.u32();
  const std::uint32_t actual = crc32_of(body);
  if (stored != actual) {
    char msg[96];
    std::snprintf(msg, sizeof msg, "checkpoint: CRC mismatch (stored %08x, computed %08x)", stored,
                  actual);
    throw FormatError(msg);
  }
  Reader r(body);
  r.bytes(4);
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  }
  Checkpoint ckpt;
  ckpt.model.base_channels = r.u32();
  const std::uint8_t flags = r.u8();
  if (flags > 7) throw FormatError("checkpoint: unknown ablation flags");
  ckpt.model.ablation.use_contrast = flags & 1;
  ckpt.model.ablation.use_injection = flags & 2;
  ckpt.model.ablation.refinement_stage = flags & 4;
  ckpt.model.ablation.aux_gamma = r.f64();
  ckpt.model.seed = r.u64();
  ckpt.adam.beta1 = r.f64();
  ckpt.adam.beta2 = r.f64();
  ckpt.adam.eps = r.f64();
  const std::uint32_t count = r.u32();
  std::set<std::string> names;
  for (std::uint32_t k = 0; k < count; ++k) {
    CheckpointTensor t;
    t.name = std::string(r.bytes(r.u16()));
    if (!names.insert(t.name).second) {
      throw FormatError("checkpoint: duplicate tensor name " + t.name);
    }
    const std::uint8_t rank = r.u8();
    std::uint64_t numel = 1;
    for (std::uint8_t d = 0; d < rank; ++d) {
      t.dims.push_back(r.u32());
      numel *= t.dims.back();
    }
    if (numel * 4 > r.remaining()) throw FormatError("checkpoint: tensor " + t.name + " truncated");
    t.values.resize(static_cast<std::size_t>(numel));
    for (float& v : t.values) v = r.f32();
    ckpt.tensors.push_back(std::move(t));
  }
  if (r.remaining() != 0) throw FormatError("checkpoint: trailing bytes after last tensor");
  return ckpt;
}

void save_checkpoint(const fs::path& path, const PCRegNet& model, const AdamConfig& adam) {
  write_file_atomic(path, encode_checkpoint(make_checkpoint(model, adam)));
}

Checkpoint load_checkpoint(const fs::path& path) {
  try {
    return decode_checkpoint(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void apply_checkpoint(const Checkpoint& ckpt, PCRegNet& model) {
  if (!(ckpt.model == model.config())) {
    throw FormatError("checkpoint config (base " + std::to_string(ckpt.model.base_channels) +
                      ", " + ckpt.model.ablation.name() + ", seed " +
                      std::to_string(ckpt.model.seed) + ") does not match the model (base " +
                      std::to_string(model.config().base_channels) + ", " +
                      model.config().ablation.name() + ", seed " +
                      std::to_string(model.config().seed) + ")");
  }
  ParameterList all = model.all_parameters();
  std::map<std::string, NamedTensor*> targets;
  for (auto* group : {&all.trainable, &all.buffers}) {
    for (auto& t : *group) targets[t.name] = &t;
  }
  if (targets.size() != ckpt.tensors.size()) {
    throw FormatError("checkpoint holds " + std::to_string(ckpt.tensors.size()) +
                      " tensors, model has " + std::to_string(targets.size()));
  }
  for (const auto& t : ckpt.tensors) {
    auto it = targets.find(t.name);
    if (it == targets.end()) throw FormatError("checkpoint tensor " + t.name + " not in model");
    if (it->second->dims() != t.dims) {
      throw FormatError("checkpoint tensor " + t.name + " has the wrong shape");
    }
  }
  for (const auto& t : ckpt.tensors) {
    auto dst = targets[t.name]->tensor.mutable_data();
    std::copy(t.values.begin(), t.values.end(), dst.begin());
  }
}

PCRegNet model_from_checkpoint(const Checkpoint& ckpt) {
  PCRegNet model(ckpt.model);
  apply_checkpoint(ckpt, model);
  model.set_training(false);
  return model;
}

// ---------------------------------------------------------------------------

std::string format_report(const metrics::MetricsReport& report) {
  const metrics::PairMetrics mean = report.aggregate();
  std::ostringstream os;
  os << "{\n";
  os << "  \"n_pairs\": " << report.per_pair.size() << ",\n";
  os << "  \"ncc\": " << fixed6(mean.ncc) << ",\n";
  os << "  \"ssim\": " << fixed6(mean.ssim) << ",\n";
  os << "  \"psnr_db\": " << fixed6(mean.psnr) << ",\n";
  if (report.temporal) {
    const std::int64_t t = micro(report.temporal->tncc);
    const std::int64_t ref = micro(report.temporal->tncc_ref);
    os << "  \"tncc\": " << micro_str(t) << ",\n";
    os << "  \"tncc_ref\": " << micro_str(ref) << ",\n";
    os << "  \"tncg\": " << micro_str(t > ref ? t - ref : ref - t) << ",\n";
  }
  os << "  \"pairs\": [";
  for (std::size_t i = 0; i < report.per_pair.size(); ++i) {
    const auto& p = report.per_pair[i];
    os << (i == 0 ? "\n" : ",\n") << "    {\"id\": " << nlohmann::json(p.id).dump()
       << ", \"ncc\": " << fixed6(p.ncc) << ", \"ssim\": " << fixed6(p.ssim)
       << ", \"psnr_db\": " << fixed6(p.psnr) << "}";
  }
  os << (report.per_pair.empty() ? "]\n" : "\n  ]\n");
  os << "}\n";
  return os.str();
}

void write_report(const fs::path& path, const metrics::MetricsReport& report) {
  write_file_atomic(path, format_report(report));
}

ParsedReport parse_report(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("report: ") + e.what());
  }
  ParsedReport r;
  try {
    r.n_pairs = j.at("n_pairs").get<std::int64_t>();
    r.ncc = micro(j.at("ncc").get<double>());
    r.ssim = micro(j.at("ssim").get<double>());
    r.psnr_db = micro(j.at("psnr_db").get<double>());
    if (j.contains("tncc")) {
      r.has_temporal = true;
      r.tncc = micro(j.at("tncc").get<double>());
      r.tncc_ref = micro(j.at("tncc_ref").get<double>());
      r.tncg = micro(j.at("tncg").get<double>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("report: ") + e.what());
  }
  return r;
}

// ---------------------------------------------------------------------------

std::string split_for_index(std::int64_t index, std::int64_t count) {
  const std::int64_t n_train = count * 8 / 10;
  const std::int64_t n_val = count / 10;
  if (index < n_train) return "train";
  if (index < n_train + n_val) return "val";
  return "test";
}

void write_manifest(const fs::path& dir, const std::vector<ManifestEntry>& entries) {
  const bool scan = !entries.empty() && !entries.front().truth.empty();
  std::ostringstream os;
  os << (scan ? "index,split,moving,fixed,truth\n" : "index,split,moving,fixed\n");
  for (const auto& e : entries) {
    os << e.index << ',' << e.split << ',' << e.moving << ',' << e.fixed;
    if (scan) os << ',' << e.truth;
    os << '\n';
  }
  write_file_atomic(dir / "manifest.csv", os.str());
}

std::vector<ManifestEntry> read_manifest(const fs::path& dir) {
  std::istringstream in(read_file(dir / "manifest.csv"));
  std::string line;
  if (!std::getline(in, line)) throw FormatError("manifest: empty file in " + dir.string());
  const auto header = split_csv_line(line);
  const bool scan = header.size() == 5;
  if (header.size() < 4 || header[0] != "index" || header[1] != "split") {
    throw FormatError("manifest: unexpected header '" + line + "'");
  }
  std::vector<ManifestEntry> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size()) throw FormatError("manifest: malformed line '" + line + "'");
    ManifestEntry e;
    try {
      e.index = std::stoll(cells[0]);
    } catch (const std::exception&) {
      throw FormatError("manifest: bad index in '" + line + "'");
    }
    e.split = cells[1];
    e.moving = cells[2];
    e.fixed = cells[3];
    if (scan) e.truth = cells[4];
    out.push_back(std::move(e));
  }
  return out;
}

Dataset load_split(const fs::path& dir, const std::string& split) {
  Dataset data;
  for (const auto& e : read_manifest(dir)) {
    if (e.split != split) continue;
    data.push_back({std::to_string(e.index), load_pgm(dir / e.moving), load_pgm(dir / e.fixed)});
  }
  return data;
}

ScanData load_scan(const fs::path& dir) {
  ScanData data;
  for (const auto& e : read_manifest(dir)) {
    if (e.truth.empty()) throw FormatError("manifest in " + dir.string() + " is not a scan dataset");
    data.moving.push_back(load_pgm(dir / e.moving));
    data.fixed.push_back(load_pgm(dir / e.fixed));
    data.truth.push_back(load_pgm(dir / e.truth));
  }
  return data;
}

}  // namespace pcreg::io
