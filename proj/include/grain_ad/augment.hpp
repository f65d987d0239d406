#pragma once

#include "grain_ad/image.hpp"

namespace grain_ad {

enum class Augmentation : std::uint8_t { None = 0, FlipRotate = 1 };

/// One of the 8 symmetries of the square: k & 3 quarter turns clockwise,
/// then a horizontal flip when k & 4. Requires a square image for odd turns.
inline Image dihedral(const Image& img, int k) {
  k &= 7;
  if (k == 0) return img;
  const int n = img.width();
  detail::require(img.width() == img.height(), "dihedral: image must be square");
  Image out(n, n, img.channels());
  std::optional<BinaryMask> fg;
  if (img.foreground()) fg = BinaryMask(n, n);
  for (int r = 0; r < n; ++r) {
    for (int q = 0; q < n; ++q) {
      int sr = r, sq = q;
      if (k & 4) sq = n - 1 - sq;
      for (int t = 0; t < (k & 3); ++t) {
        const int nr = n - 1 - sq, nq = sr;  // inverse of one clockwise turn
        sr = nr;
        sq = nq;
      }
      for (int c = 0; c < img.channels(); ++c) out.at(r, q, c) = img.at(sr, sq, c);
      if (fg) fg->set(r, q, (*img.foreground())(sr, sq));
    }
  }
  if (fg) out.set_foreground(std::move(*fg));
  return out;
}

}  // namespace grain_ad
