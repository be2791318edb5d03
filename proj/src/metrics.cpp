#include "pcreg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "pcreg/objective.hpp"

namespace pcreg::metrics {
namespace {

void require_same(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw ShapeError(std::string(what) + ": size mismatch " + std::to_string(a) + " vs " +
                     std::to_string(b));
  }
}

void require_same(const Image& a, const Image& b, const char* what) {
  if (a.height != b.height || a.width != b.width) {
    throw ShapeError(std::string(what) + ": shape mismatch " + std::to_string(a.height) + "x" +
                     std::to_string(a.width) + " vs " + std::to_string(b.height) + "x" +
                     std::to_string(b.width));
  }
}

bool is_constant(std::span<const float> x) {
  return std::all_of(x.begin(), x.end(), [&](float v) { return v == x.front(); });
}

}  // namespace

Image Image::from_tensor(const Tensor& t, std::int64_t n) {
  const Shape& s = t.shape();
  if (s.c != 1 || n < 0 || n >= s.n) {
    throw ShapeError("Image::from_tensor: need element " + std::to_string(n) +
                     " of an (N, 1, H, W) tensor, got " + s.str());
  }
  Image img(s.h, s.w);
  auto src = t.data().subspan(static_cast<std::size_t>(n * s.plane()),
                              static_cast<std::size_t>(s.plane()));
  std::copy(src.begin(), src.end(), img.pixels.begin());
  return img;
}

Tensor Image::to_tensor() const { return Tensor({1, 1, height, width}, pixels); }

Tensor stack(const std::vector<const Image*>& images) {
  if (images.empty()) throw ShapeError("stack: no images");
  const Image& first = *images.front();
  std::vector<float> data;
  data.reserve(images.size() * first.pixels.size());
  for (const Image* img : images) {
    require_same(first, *img, "stack");
    data.insert(data.end(), img->pixels.begin(), img->pixels.end());
  }
  return Tensor({static_cast<std::int64_t>(images.size()), 1, first.height, first.width},
                std::move(data));
}

Image clamp01(const Image& x) {
  Image out = x;
  for (float& v : out.pixels) v = std::clamp(v, 0.0f, 1.0f);
  return out;
}

double ncc(std::span<const float> a, std::span<const float> b) {
  require_same(a.size(), b.size(), "ncc");
  if (a.empty()) throw ShapeError("ncc: empty images");
  const bool ca = is_constant(a);
  const bool cb = is_constant(b);
  if (ca && cb) return a.front() == b.front() ? 1.0 : 0.0;
  if (ca || cb) return 0.0;
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma;
    const double db = b[i] - mb;
    cov += da * db;
    va += da * da;
    vb += db * db;
  }
  return std::clamp(cov / std::sqrt(va * vb), -1.0, 1.0);
}

double ncc(const Image& a, const Image& b) {
  require_same(a, b, "ncc");
  return ncc(a.pixels, b.pixels);
}

double psnr(std::span<const float> a, std::span<const float> b) {
  require_same(a.size(), b.size(), "psnr");
  if (a.empty()) throw ShapeError("psnr: empty images");
  double sse = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    sse += d * d;
  }
  if (sse == 0.0) return kPsnrCap;
  return 10.0 * std::log10(static_cast<double>(a.size()) / sse);
}

double psnr(const Image& a, const Image& b) {
  require_same(a, b, "psnr");
  return psnr(a.pixels, b.pixels);
}

double ssim(const Image& a, const Image& b) {
  require_same(a, b, "ssim");
  return ssim_index(a.pixels, b.pixels, Shape{1, 1, a.height, a.width});
}

Image merge_frame(const Image& odd_img, const Image& even_registered) {
  require_same(odd_img, even_registered, "merge_frame");
  Image out(odd_img.height, 2 * odd_img.width);
  for (std::int64_t r = 0; r < odd_img.height; ++r) {
    for (std::int64_t j = 0; j < odd_img.width; ++j) {
      out.at(r, 2 * j) = odd_img.at(r, j);
      out.at(r, 2 * j + 1) = even_registered.at(r, j);
    }
  }
  return out;
}

ColumnSplit split_columns(const Image& full) {
  if (full.width % 2 != 0) {
    throw ShapeError("split_columns: width must be even, got " + std::to_string(full.width));
  }
  ColumnSplit s{Image(full.height, full.width / 2), Image(full.height, full.width / 2)};
  for (std::int64_t r = 0; r < full.height; ++r) {
    for (std::int64_t j = 0; j < full.width / 2; ++j) {
      s.odd.at(r, j) = full.at(r, 2 * j);
      s.even.at(r, j) = full.at(r, 2 * j + 1);
    }
  }
  return s;
}

double tncc(const FrameSequence& seq) {
  const std::size_t k = seq.frames.size();
  if (k < 2) {
    throw std::invalid_argument("tncc needs at least 2 frames, got " + std::to_string(k));
  }
  double sum = 0.0;
  for (std::size_t i = 0; i + 1 < k; ++i) sum += ncc(seq.frames[i], seq.frames[i + 1]);
  return sum / static_cast<double>(k - 1);
}

double tncg(double tncc_value, double tncc_ref) { return std::abs(tncc_value - tncc_ref); }

PairMetrics MetricsReport::aggregate() const {
  PairMetrics m;
  m.id = "mean";
  if (per_pair.empty()) return m;
  for (const auto& p : per_pair) {
    m.ncc += p.ncc;
    m.ssim += p.ssim;
    m.psnr += p.psnr;
  }
  const double n = static_cast<double>(per_pair.size());
  m.ncc /= n;
  m.ssim /= n;
  m.psnr /= n;
  return m;
}

PairMetrics evaluate_pair(const std::string& id, const Image& a, const Image& b) {
  const Image ca = clamp01(a);
  const Image cb = clamp01(b);
  return {id, ncc(ca, cb), ssim(ca, cb), psnr(ca, cb)};
}

}  // namespace pcreg::metrics
