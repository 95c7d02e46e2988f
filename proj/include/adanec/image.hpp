#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace adanec {

class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Planar RGB picture, channel-major (c, y, x), values in [0,1].
class Image {
 public:
  static constexpr int kChannels = 3;
  static constexpr int kMinSide = 8;

  Image() = default;
  Image(int height, int width, double fill = 0.0);

  int height() const { return height_; }
  int width() const { return width_; }
  int channels() const { return kChannels; }
  std::size_t plane_size() const { return static_cast<std::size_t>(height_) * width_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& at(int c, int y, int x) { return data_[c * plane_size() + static_cast<std::size_t>(y) * width_ + x]; }
  double at(int c, int y, int x) const { return data_[c * plane_size() + static_cast<std::size_t>(y) * width_ + x]; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

  bool same_shape(const Image& other) const { return height_ == other.height_ && width_ == other.width_; }

  // Throws if any value is non-finite or leaves [0,1], or a side is < 8.
  void validate() const;
  void clamp01();

  bool operator==(const Image& other) const = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<double> data_;
};

// Coefficients that produced a synthetic sample; needed to re-synthesize.
struct SynthesisParams {
  double omega = 1.0;
  double phi = 0.0;
  double blur_sigma = 0.0;
  double gamma = 1.0;
};

struct TripletSample {
  Image contaminated;
  Image transmission;
  Image reflection;
  int domain_id = 0;
  std::optional<SynthesisParams> synthesis;
};

void require_same_shape(const Image& a, const Image& b, const char* what);

double mse(const Image& a, const Image& b);

// Peak value 1; 100 dB when MSE < 1e-10.
double psnr(const Image& a, const Image& b);

// Gaussian-window SSIM (11 taps, sigma 1.5, C1 = 0.01^2, C2 = 0.03^2), valid
// region only, averaged over channels and positions.
double ssim(const Image& a, const Image& b);

// 8-bit RGB PNG, value = round(255 x), load divides by 255.
void save_png(const Image& img, const std::filesystem::path& path);
Image load_png(const std::filesystem::path& path);

// Bilinear resample to the requested size (used where a fixed input size is needed).
Image resize_bilinear(const Image& img, int height, int width);

// One of the eight flips/rotations of a square image; k in [0,8), 0 is the identity.
Image dihedral(const Image& img, int k);

// Horizontal mosaic with a white gutter; all tiles must share a height.
Image hconcat(std::span<const Image> tiles, int gutter = 2);
Image vconcat(std::span<const Image> rows, int gutter = 2);

}  // namespace adanec
