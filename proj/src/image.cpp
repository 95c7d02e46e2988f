#include "adanec/image.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <sstream>

namespace adanec {

Image::Image(int height, int width, double fill) : height_(height), width_(width) {
  if (height <= 0 || width <= 0) {
    throw ShapeError("image dimensions must be positive");
  }
  data_.assign(static_cast<std::size_t>(kChannels) * height * width, fill);
}

void Image::validate() const {
  if (height_ < kMinSide || width_ < kMinSide) {
    std::ostringstream os;
    os << "image " << height_ << "x" << width_ << " is smaller than the " << kMinSide << "x" << kMinSide << " minimum";
    throw ShapeError(os.str());
  }
  for (double v : data_) {
    if (!std::isfinite(v) || v < 0.0 || v > 1.0) {
      throw std::domain_error("image value outside [0,1] or non-finite");
    }
  }
}

void Image::clamp01() {
  for (double& v : data_) v = std::clamp(v, 0.0, 1.0);
}

void require_same_shape(const Image& a, const Image& b, const char* what) {
  if (!a.same_shape(b)) {
    std::ostringstream os;
    os << what << ": shape mismatch " << a.height() << "x" << a.width() << " vs " << b.height() << "x" << b.width();
    throw ShapeError(os.str());
  }
}

double mse(const Image& a, const Image& b) {
  require_same_shape(a, b, "mse");
  auto x = a.data();
  auto y = b.data();
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - y[i];
    acc += d * d;
  }
  return acc / static_cast<double>(x.size());
}

double psnr(const Image& a, const Image& b) {
  require_same_shape(a, b, "psnr");
  const double m = mse(a, b);
  if (m < 1e-10) return 100.0;
  return 10.0 * std::log10(1.0 / m);
}

namespace {

constexpr int kSsimTaps = 11;
constexpr double kSsimSigma = 1.5;

std::array<double, kSsimTaps> gaussian_window() {
  std::array<double, kSsimTaps> g{};
  double sum = 0.0;
  for (int i = 0; i < kSsimTaps; ++i) {
    const double d = i - kSsimTaps / 2;
    g[i] = std::exp(-(d * d) / (2.0 * kSsimSigma * kSsimSigma));
    sum += g[i];
  }
  for (double& v : g) v /= sum;
  return g;
}

// Valid-mode separable filtering of one plane.
std::vector<double> filter_valid(const double* plane, int h, int w, const std::array<double, kSsimTaps>& g) {
  const int oh = h - kSsimTaps + 1;
  const int ow = w - kSsimTaps + 1;
  std::vector<double> tmp(static_cast<std::size_t>(h) * ow);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int t = 0; t < kSsimTaps; ++t) acc += g[t] * plane[y * w + x + t];
      tmp[y * ow + x] = acc;
    }
  }
  std::vector<double> out(static_cast<std::size_t>(oh) * ow);
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int t = 0; t < kSsimTaps; ++t) acc += g[t] * tmp[(y + t) * ow + x];
      out[y * ow + x] = acc;
    }
  }
  return out;
}

}  // namespace

double ssim(const Image& a, const Image& b) {
  require_same_shape(a, b, "ssim");
  const int h = a.height();
  const int w = a.width();
  if (h < kSsimTaps || w < kSsimTaps) {
    throw ShapeError("ssim needs images of at least 11x11");
  }
  constexpr double c1 = 0.01 * 0.01;
  constexpr double c2 = 0.03 * 0.03;
  const auto g = gaussian_window();
  const std::size_t n = a.plane_size();

  double total = 0.0;
  std::size_t count = 0;
  std::vector<double> xx(n), yy(n), xy(n);
  for (int c = 0; c < Image::kChannels; ++c) {
    const double* pa = a.data().data() + c * n;
    const double* pb = b.data().data() + c * n;
    for (std::size_t i = 0; i < n; ++i) {
      xx[i] = pa[i] * pa[i];
      yy[i] = pb[i] * pb[i];
      xy[i] = pa[i] * pb[i];
    }
    const auto mu_a = filter_valid(pa, h, w, g);
    const auto mu_b = filter_valid(pb, h, w, g);
    const auto e_aa = filter_valid(xx.data(), h, w, g);
    const auto e_bb = filter_valid(yy.data(), h, w, g);
    const auto e_ab = filter_valid(xy.data(), h, w, g);
    for (std::size_t i = 0; i < mu_a.size(); ++i) {
      const double ma = mu_a[i];
      const double mb = mu_b[i];
      const double va = e_aa[i] - ma * ma;
      const double vb = e_bb[i] - mb * mb;
      const double cov = e_ab[i] - ma * mb;
      total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    count += mu_a.size();
  }
  return total / static_cast<double>(count);
}

Image dihedral(const Image& img, int k) {
  if (k < 0 || k >= 8) throw std::invalid_argument("dihedral: index must lie in [0,8)");
  if (k == 0) return img;
  const int n = img.height();
  if (img.width() != n) throw std::invalid_argument("dihedral: image must be square");
  Image out(n, n);
  for (int c = 0; c < Image::kChannels; ++c)
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) {
        int sy = y, sx = x;
        if (k & 4) std::swap(sy, sx);
        if (k & 2) sy = n - 1 - sy;
        if (k & 1) sx = n - 1 - sx;
        out.at(c, y, x) = img.at(c, sy, sx);
      }
  return out;
}

Image resize_bilinear(const Image& img, int height, int width) {
  if (img.height() == height && img.width() == width) return img;
  Image out(height, width);
  const double sy = static_cast<double>(img.height()) / height;
  const double sx = static_cast<double>(img.width()) / width;
  for (int c = 0; c < Image::kChannels; ++c) {
    for (int y = 0; y < height; ++y) {
      const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, img.height() - 1.0);
      const int y0 = static_cast<int>(fy);
      const int y1 = std::min(y0 + 1, img.height() - 1);
      const double ty = fy - y0;
      for (int x = 0; x < width; ++x) {
        const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, img.width() - 1.0);
        const int x0 = static_cast<int>(fx);
        const int x1 = std::min(x0 + 1, img.width() - 1);
        const double tx = fx - x0;
        const double top = img.at(c, y0, x0) * (1 - tx) + img.at(c, y0, x1) * tx;
        const double bot = img.at(c, y1, x0) * (1 - tx) + img.at(c, y1, x1) * tx;
        out.at(c, y, x) = top * (1 - ty) + bot * ty;
      }
    }
  }
  return out;
}

Image hconcat(std::span<const Image> tiles, int gutter) {
  if (tiles.empty()) throw ShapeError("hconcat of nothing");
  const int h = tiles.front().height();
  int w = 0;
  for (const auto& t : tiles) {
    if (t.height() != h) throw ShapeError("hconcat: tile heights differ");
    w += t.width();
  }
  w += gutter * static_cast<int>(tiles.size() - 1);
  Image out(h, w, 1.0);
  int x0 = 0;
  for (const auto& t : tiles) {
    for (int c = 0; c < Image::kChannels; ++c)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < t.width(); ++x) out.at(c, y, x0 + x) = t.at(c, y, x);
    x0 += t.width() + gutter;
  }
  return out;
}

Image vconcat(std::span<const Image> rows, int gutter) {
  if (rows.empty()) throw ShapeError("vconcat of nothing");
  const int w = rows.front().width();
  int h = 0;
  for (const auto& r : rows) {
    if (r.width() != w) throw ShapeError("vconcat: row widths differ");
    h += r.height();
  }
  h += gutter * static_cast<int>(rows.size() - 1);
  Image out(h, w, 1.0);
  int y0 = 0;
  for (const auto& r : rows) {
    for (int c = 0; c < Image::kChannels; ++c)
      for (int y = 0; y < r.height(); ++y)
        for (int x = 0; x < w; ++x) out.at(c, y0 + y, x) = r.at(c, y, x);
    y0 += r.height() + gutter;
  }
  return out;
}

}  // namespace adanec
