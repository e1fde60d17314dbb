#pragma once

#include "fsnas/rng.hpp"
#include "fsnas/tensor.hpp"

namespace fsnas::data {

struct AugmentConfig {
  double brightness_contrast_prob = 0.5;
  double max_rotation_deg = 15.0;
  int crop_size = 0;      // 0 = input resolution
  int crop_padding = 4;
  bool enabled = true;

  void validate(int resolution) const;
};

// Per image, independently: brightness/contrast scaling with the configured
// probability, a random rotation with bilinear resampling and zero fill,
// zero-pad then random crop, and a final clamp to [0,1].
TensorF augment(const TensorF& batch, const AugmentConfig& cfg, Rng& rng);

// Building blocks, exposed for direct testing.
void rotate_bilinear(const float* src, float* dst, int channels, int h, int w,
                     double angle_rad);
void brightness_contrast(float* img, int channels, int h, int w,
                         double bright_scale, double contrast_scale);
void pad_crop(const float* src, float* dst, int channels, int h, int w,
              int padding, int crop_size, int offset_y, int offset_x);

}  // namespace fsnas::data
