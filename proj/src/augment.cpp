#include "fsnas/augment.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

#include "fsnas/error.hpp"

namespace fsnas::data {

void AugmentConfig::validate(int resolution) const {
  check(brightness_contrast_prob >= 0.0 && brightness_contrast_prob <= 1.0,
        ErrorCode::Config, "brightness_contrast_prob must be in [0,1]");
  check(max_rotation_deg >= 0.0, ErrorCode::Config, "max_rotation_deg must be >= 0");
  check(crop_padding >= 0, ErrorCode::Config, "crop_padding must be >= 0");
  const int crop = crop_size > 0 ? crop_size : resolution;
  check(crop <= resolution + 2 * crop_padding, ErrorCode::Config,
        "crop_size exceeds padded resolution");
}

void brightness_contrast(float* img, int channels, int h, int w,
                         double bright_scale, double contrast_scale) {
  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  for (int c = 0; c < channels; ++c) {
    float* p = img + c * plane;
    double mean = 0.0;
    for (std::int64_t i = 0; i < plane; ++i) {
      p[i] = static_cast<float>(p[i] * bright_scale);
      mean += p[i];
    }
    mean /= static_cast<double>(plane);
    for (std::int64_t i = 0; i < plane; ++i)
      p[i] = static_cast<float>((p[i] - mean) * contrast_scale + mean);
  }
}

void rotate_bilinear(const float* src, float* dst, int channels, int h, int w,
                     double angle_rad) {
  const double cy = (h - 1) / 2.0, cx = (w - 1) / 2.0;
  const double ct = std::cos(angle_rad), st = std::sin(angle_rad);
  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double sx = ct * (x - cx) + st * (y - cy) + cx;
      const double sy = -st * (x - cx) + ct * (y - cy) + cy;
      const int x0 = static_cast<int>(std::floor(sx));
      const int y0 = static_cast<int>(std::floor(sy));
      const double fx = sx - x0, fy = sy - y0;
      for (int c = 0; c < channels; ++c) {
        const float* p = src + c * plane;
        auto sample = [&](int yy, int xx) -> double {
          if (yy < 0 || yy >= h || xx < 0 || xx >= w) return 0.0;
          return p[static_cast<std::int64_t>(yy) * w + xx];
        };
        const double v = (1 - fy) * ((1 - fx) * sample(y0, x0) + fx * sample(y0, x0 + 1)) +
                         fy * ((1 - fx) * sample(y0 + 1, x0) + fx * sample(y0 + 1, x0 + 1));
        dst[c * plane + static_cast<std::int64_t>(y) * w + x] = static_cast<float>(v);
      }
    }
  }
}

void pad_crop(const float* src, float* dst, int channels, int h, int w,
              int padding, int crop_size, int offset_y, int offset_x) {
  // source coordinates of the crop origin, relative to the unpadded image
  const int oy = offset_y - padding, ox = offset_x - padding;
  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  const std::int64_t out_plane = static_cast<std::int64_t>(crop_size) * crop_size;
  for (int c = 0; c < channels; ++c)
    for (int y = 0; y < crop_size; ++y)
      for (int x = 0; x < crop_size; ++x) {
        const int sy = oy + y, sx = ox + x;
        const bool inside = sy >= 0 && sy < h && sx >= 0 && sx < w;
        dst[c * out_plane + static_cast<std::int64_t>(y) * crop_size + x] =
            inside ? src[c * plane + static_cast<std::int64_t>(sy) * w + sx] : 0.0f;
      }
}

TensorF augment(const TensorF& batch, const AugmentConfig& cfg, Rng& rng) {
  check(batch.ndim() == 4, ErrorCode::Dimension, "augment expects NCHW");
  const int n = batch.dim(0), channels = batch.dim(1);
  const int h = batch.dim(2), w = batch.dim(3);
  cfg.validate(h);
  if (!cfg.enabled) return batch;

  const int crop = cfg.crop_size > 0 ? cfg.crop_size : h;
  TensorF out({n, channels, crop, crop});
  std::vector<float> work(static_cast<std::size_t>(channels) * h * w);
  std::vector<float> rotated(work.size());
  const std::int64_t item = static_cast<std::int64_t>(channels) * h * w;

  for (int i = 0; i < n; ++i) {
    std::memcpy(work.data(), batch.data() + i * item,
                sizeof(float) * static_cast<std::size_t>(item));
    if (rng.bernoulli(cfg.brightness_contrast_prob)) {
      const double b = rng.uniform(0.8, 1.2);
      const double c = rng.uniform(0.8, 1.2);
      brightness_contrast(work.data(), channels, h, w, b, c);
    }
    const double deg = rng.uniform(-cfg.max_rotation_deg, cfg.max_rotation_deg);
    rotate_bilinear(work.data(), rotated.data(), channels, h, w,
                    deg * 3.141592653589793 / 180.0);
    const int max_off = 2 * cfg.crop_padding + (h - crop);
    const int offy = max_off > 0 ? static_cast<int>(rng.randint(max_off + 1)) : 0;
    const int offx = max_off > 0 ? static_cast<int>(rng.randint(max_off + 1)) : 0;
    pad_crop(rotated.data(), out.data() + static_cast<std::int64_t>(i) * channels * crop * crop,
             channels, h, w, cfg.crop_padding, crop, offy, offx);
  }
  for (auto& v : out.values()) v = std::clamp(v, 0.0f, 1.0f);
  return out;
}

}  // namespace fsnas::data
