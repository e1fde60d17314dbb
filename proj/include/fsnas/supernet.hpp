#pragma once

#include <functional>
#include <string>
#include <vector>

#include "fsnas/dataset.hpp"
#include "fsnas/ops.hpp"
#include "fsnas/rng.hpp"
#include "fsnas/search_space.hpp"
#include "fsnas/split_plan.hpp"

namespace fsnas::net {

struct ConvUnit {
  TensorF weight;  // [out_cap, in_cap, k, k]
  int k = 3;
  int stride = 1;
  int padding = 1;
};

struct BnUnit {
  TensorF gamma;  // [cap]
  TensorF beta;   // [cap]
  BnStats<float> stats;
};

// Basic two-conv residual block. conv1 sets the searched mid width, conv2
// the stage's shared out width; the first block of a stage carries a 1x1
// projection shortcut (which also applies the stage stride).
struct Block {
  ConvUnit conv1;
  BnUnit bn1;
  ConvUnit conv2;
  BnUnit bn2;
  bool has_proj = false;
  ConvUnit proj;
  BnUnit bnp;
};

struct Group {
  std::vector<int> candidates;  // owned out-channel values, sorted
  int out_cap = 0;
  std::vector<Block> blocks;    // sized to the stage's max depth
};

struct Stage {
  std::vector<Group> groups;
  std::vector<int> out_candidates;
  int mid_cap = 0;
  int in_cap = 0;
  int stride = 1;
  int max_depth = 0;
};

struct Head {
  TensorF weight;  // [num_classes, in_cap]
  TensorF bias;    // [num_classes]
};

// Weight-entangled elastic residual net. Copies share parameter storage but
// hold their own BN statistics, so a plain copy is safe for read-only
// evaluation with per-architecture recalibration.
struct SuperNet {
  space::SearchSpace space;
  split::GroupPlan plan;
  ConvUnit stem;
  BnUnit stem_bn;
  std::vector<Stage> stages;
  std::vector<Head> heads;  // one per last-stage group
  float dropout_p = 0.2f;

  struct ParamRef {
    std::string name;
    TensorF tensor;
    int stage;  // -1 stem, stage count = heads
    int group;  // -1 for stem
  };
  std::vector<ParamRef> parameters();

  SuperNet clone() const;
};

// Named view over every persistent float buffer (parameters and BN running
// statistics) in a fixed order; checkpoints and inheritance use it.
struct TensorView {
  std::string name;
  std::vector<int> shape;
  float* data;
};
void visit_tensors(SuperNet& net,
                   const std::function<void(const TensorView&)>& fn);

struct TensorSchema {
  std::string name;
  std::vector<int> shape;
};
// The (name, shape) list a net built from (space, plan) will contain,
// computable without allocating the net.
std::vector<TensorSchema> tensor_schema(const space::SearchSpace& sp,
                                        const split::GroupPlan& plan);

SuperNet build_supernet(const space::SearchSpace& sp,
                        const split::GroupPlan& plan, std::uint64_t seed);

// Per-stage group index for every stage of the architecture.
std::vector<int> route(const SuperNet& net, const space::Architecture& arch);

TensorF forward(SuperNet& net, const space::Architecture& arch,
                const TensorF& batch, BnMode mode, bool dropout_active = false,
                Rng* dropout_rng = nullptr);

// Self-contained single-path network: extraction target and oracle trainee.
struct SubNetwork {
  space::SearchSpace space;
  space::Architecture arch;
  ConvUnit stem;
  BnUnit stem_bn;
  std::vector<std::vector<Block>> stage_blocks;
  Head head;

  std::vector<TensorF> parameters();
};

TensorF forward(SubNetwork& net, const TensorF& batch, BnMode mode,
                bool dropout_active = false, float dropout_p = 0.0f,
                Rng* dropout_rng = nullptr);

// Fresh single-path net with the same init scheme as the super-net.
SubNetwork build_subnetwork(const space::SearchSpace& sp,
                            const space::Architecture& arch,
                            std::uint64_t seed);

// Deep copy of the architecture's active slices, BN statistics included.
SubNetwork extract_subnet(const SuperNet& net, const space::Architecture& arch);

// Reset + re-accumulate BN running statistics along the routed path using
// gradient-free forward passes; other groups' statistics stay untouched.
void bn_recalibrate(SuperNet& net, const space::Architecture& arch,
                    const std::vector<TensorF>& batches);
void bn_recalibrate(SuperNet& net, const space::Architecture& arch,
                    const data::Dataset& ds, const std::vector<int>& pool,
                    int batch_size, int num_batches, std::uint64_t seed);

// Copy prefix regions from src into dst following the map.
void apply_inheritance(SuperNet& dst, SuperNet& src,
                       const split::InheritanceMap& map);

// Top-1 accuracy of a subnetwork over the given items, eval mode.
double evaluate_accuracy(SubNetwork& net, const data::Dataset& ds,
                         const std::vector<int>& indices, int batch_size);

}  // namespace fsnas::net
