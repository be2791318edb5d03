#pragma once

// Expected intermediate shapes of the full model, written out level by
// level from the architecture description.

#include <string>
#include <utility>
#include <vector>

#include "pcreg/tensor.hpp"

namespace shape_table {

using Entry = std::pair<std::string, pcreg::Shape>;

inline std::vector<Entry> full_model(std::int64_t n, std::int64_t h, std::int64_t w,
                                     std::int64_t b) {
  auto at = [&](std::int64_t c, int level) {
    const std::int64_t f = std::int64_t{1} << (level - 1);
    return pcreg::Shape{n, c, h / f, w / f};
  };
  const std::int64_t c[5] = {0, b, 2 * b, 4 * b, 8 * b};
  std::vector<Entry> t;
  for (int l = 1; l <= 4; ++l) t.emplace_back("reg.enc" + std::to_string(l), at(c[l], l));
  t.emplace_back("reg.dec3", at(c[3], 3));
  t.emplace_back("reg.dec2", at(c[2], 2));
  t.emplace_back("reg.dec1", at(c[1], 1));
  t.emplace_back("reg.coarse", at(1, 1));
  for (int l = 1; l <= 4; ++l) t.emplace_back("ref.enc" + std::to_string(l), at(c[l], l));
  for (int l = 1; l <= 4; ++l) {
    t.emplace_back("contrast.in" + std::to_string(l), at(2 * c[l], l));
    t.emplace_back("contrast.out" + std::to_string(l), at(c[l], l));
  }
  t.emplace_back("refine.input", at(1 + b, 1));
  for (int l = 1; l <= 4; ++l) t.emplace_back("refine.enc" + std::to_string(l), at(c[l], l));
  t.emplace_back("refine.dec3", at(c[3], 3));
  t.emplace_back("refine.inject4", at(c[3], 3));
  t.emplace_back("refine.dec2", at(c[2], 2));
  t.emplace_back("refine.inject3", at(c[2], 2));
  t.emplace_back("refine.dec1", at(c[1], 1));
  t.emplace_back("refine.inject2", at(c[1], 1));
  t.emplace_back("refine.inject1", at(c[1], 1));
  t.emplace_back("refine.refined", at(1, 1));
  return t;
}

}  // namespace shape_table
