#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fsnas/rng.hpp"

namespace fsnas::space {

// Arbitrary-precision unsigned integer (decimal-ish limbs, base 1e9). Only
// what counting architectures needs: add, multiply, compare, print.
class BigUint {
 public:
  BigUint() : limbs_{0} {}
  explicit BigUint(std::uint64_t v);

  BigUint& operator+=(const BigUint& o);
  BigUint& mul_small(std::uint32_t m);
  BigUint operator*(const BigUint& o) const;
  bool operator==(const BigUint& o) const { return limbs_ == o.limbs_; }
  std::string str() const;

 private:
  void trim();
  std::vector<std::uint32_t> limbs_;  // little-endian, base 1e9
};

struct StageSpec {
  int base_channels = 0;
  std::vector<int> depth_choices;  // sorted ascending
  std::vector<double> ratios;      // sorted ascending, in (0, 1]
  int channel_multiple = 8;
  int stride = 1;
};

struct SearchSpace {
  std::string name;
  int stem_channels = 0;
  int stem_stride = 1;
  std::vector<StageSpec> stages;
  int num_classes = 0;
  int input_resolution = 0;

  void validate() const;
};

// Nearest multiple of `multiple` to base*ratio; ties round up; >= multiple.
int round_channels(int base, double ratio, int multiple);

// Sorted, deduplicated channel candidates of one stage.
std::vector<int> candidate_channels(const StageSpec& stage);

// Number of distinct architectures in the space.
BigUint space_size(const SearchSpace& space);

struct StageChoice {
  int depth = 0;
  int out_idx = 0;              // index into the stage's candidate set
  std::vector<int> mid_idx;     // one per active block, same candidate set

  bool operator==(const StageChoice&) const = default;
};

struct Architecture {
  std::vector<StageChoice> stages;

  bool operator==(const Architecture&) const = default;
};

void validate_arch(const SearchSpace& space, const Architecture& arch);

Architecture largest_arch(const SearchSpace& space);
Architecture smallest_arch(const SearchSpace& space);

// Canonical form "d{depth}:o{out_ch}:m{c1,c2,...};..." with channel values.
std::string encode(const SearchSpace& space, const Architecture& arch);
Architecture decode(const SearchSpace& space, const std::string& text);

std::uint64_t arch_hash(const SearchSpace& space, const Architecture& arch);

// Independent uniform draw over every decision dimension.
Architecture sample_uniform(const SearchSpace& space, Rng& rng);

// Strict-fairness sampler state: one shuffled permutation + cursor per
// decision dimension. Mid dimensions of inactive blocks do not consume
// permutation entries, so fairness is conditioned on the block being active.
class FairSamplerState {
 public:
  explicit FairSamplerState(const SearchSpace& space);

  // Emits one fairness round (lcm of dimension cardinalities, capped);
  // dimension cursors persist across rounds so capped dimensions rotate.
  std::vector<Architecture> sample_round(const SearchSpace& space, Rng& rng,
                                         int cap = 64);

  Architecture sample_one(const SearchSpace& space, Rng& rng);

  std::uint64_t round_length(int cap = 64) const;

 private:
  struct Dim {
    std::vector<int> perm;
    std::size_t cursor = 0;
    bool shuffled = false;
  };
  int draw(Dim& d, Rng& rng);

  // Per stage: [depth dim, out dim, mid dim per block up to max depth]
  struct StageDims {
    Dim depth;
    Dim out;
    std::vector<Dim> mids;
  };
  std::vector<StageDims> dims_;
};

std::uint64_t fair_round_length(const std::vector<std::uint64_t>& cardinalities,
                                std::uint64_t cap);

}  // namespace fsnas::space
