#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fsnas/rng.hpp"
#include "fsnas/tensor.hpp"

namespace fsnas::data {

enum class Split : std::uint8_t { Train = 0, Val = 1, Eval = 2 };

struct Dataset {
  std::string name;
  int num_classes = 0;
  TensorF images;                      // [N,3,H,W], values in [0,1]
  std::vector<int> labels;             // in [0, num_classes)
  std::vector<std::uint8_t> split_tag; // one Split per item

  int size() const { return images.defined() ? images.dim(0) : 0; }
  int resolution() const { return images.dim(2); }
  std::vector<int> indices_of(Split s) const;
  std::uint64_t content_hash() const;
  void validate() const;
};

// Class-conditional oriented multi-frequency patterns. Each class pairs an
// orientation with a phase relation between two frequency bands; the
// absolute phase is randomized per image, so separating classes needs
// nonlinear, spatially local features and benefits from model capacity.
// `difficulty` scales the additive noise and distractor amplitude.
Dataset gen_synthetic(int num_classes, int per_class, int resolution,
                      double difficulty, std::uint64_t seed,
                      double val_fraction = 0.2);

// Fixed-record binary format: 16-byte header (magic, version, H, W, N),
// then per record 1 label byte + 3*H*W pixel bytes, planar RGB, row-major.
Dataset load_binary(const std::string& path);
void save_binary(const std::string& path, const Dataset& ds);

// New dataset holding the given items, original order and tags preserved.
Dataset select(const Dataset& ds, const std::vector<int>& indices);

// Stratified-by-class deterministic subsample of the whole dataset.
Dataset subset(const Dataset& ds, double fraction, std::uint64_t seed);

// Gather a batch [B,3,H,W] plus labels.
void gather_batch(const Dataset& ds, const std::vector<int>& indices,
                  TensorF& images, std::vector<int>& labels);

// Deterministic batch schedule over the given items: optional shuffle by
// seed, fixed batch size, final partial batch dropped when drop_last.
std::vector<std::vector<int>> batch_schedule(std::vector<int> indices,
                                             int batch_size, bool shuffle,
                                             Rng& rng, bool drop_last = true);

}  // namespace fsnas::data
