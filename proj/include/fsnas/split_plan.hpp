#pragma once

#include <map>
#include <string>
#include <vector>

#include "fsnas/json_io.hpp"
#include "fsnas/search_space.hpp"

namespace fsnas::split {

struct PeelEvent {
  int stage = 0;         // 0-based
  int candidate = 0;     // channel value moved into its own group
  int source_group = 0;  // group index that owned it before the split

  bool operator==(const PeelEvent&) const = default;
};

// Per-stage partition of the candidate channel set into weight groups.
// Ordering convention: singletons in peel order first, the entangled
// remainder last, so routing indices stay stable across splits.
struct GroupPlan {
  int num_groups = 1;
  std::vector<std::vector<std::vector<int>>> stage_partitions;
  std::vector<PeelEvent> history;

  void validate(const space::SearchSpace& sp) const;
  int group_count(int stage) const {
    return static_cast<int>(stage_partitions[static_cast<std::size_t>(stage)].size());
  }
  const std::vector<int>& group_candidates(int stage, int group) const {
    return stage_partitions[static_cast<std::size_t>(stage)][static_cast<std::size_t>(group)];
  }
  // The unique group owning this candidate channel (routing totality).
  int group_of(int stage, int candidate) const;

  bool operator==(const GroupPlan&) const = default;
};

// Single group per stage holding every candidate (the one-shot net).
GroupPlan initial_plan(const space::SearchSpace& sp);

// Largest per-stage candidate count: the schedule's end point.
int max_groups(const space::SearchSpace& sp);

bool fully_split(const GroupPlan& plan, const space::SearchSpace& sp);

// Advance g -> g+1: every stage whose entangled group still holds more than
// one candidate peels one of them into a new singleton. The default peels
// the largest; `peel_override` picks an explicit candidate per stage.
GroupPlan next_split(const GroupPlan& plan, const space::SearchSpace& sp,
                     const std::map<int, int>& peel_override = {});

struct CopyRecord {
  std::string dst;
  std::string src;
  std::vector<int> prefix;  // per-axis prefix lengths (the dst shape)
};

// One copy record per destination tensor of the post-split net. Unchanged
// groups map onto themselves; a peeled singleton (and the shrunk entangled
// remainder) copy channel prefixes from the group that owned their
// candidates before the split.
struct InheritanceMap {
  std::vector<CopyRecord> records;
};

InheritanceMap inheritance_map(const GroupPlan& old_plan,
                               const GroupPlan& new_plan,
                               const space::SearchSpace& sp);

enum class LrRule { InverseProb, Preset };

// Per-group learning-rate multipliers; classifier heads follow their
// last-stage group.
struct LRPlan {
  std::vector<std::vector<double>> stage_group_mult;
  std::vector<double> head_mult;

  double group(int stage, int g) const {
    return stage_group_mult[static_cast<std::size_t>(stage)][static_cast<std::size_t>(g)];
  }
  double head(int g) const { return head_mult[static_cast<std::size_t>(g)]; }
};

struct PresetRow {
  int group = 0;       // global group count g
  int stage = 0;       // 1-based, as printed
  int channels = 0;    // channel label from the published table
  double multiplier = 1.0;
};

// The published adaptive-LR table for the resnet48 space, kept verbatim.
const std::vector<PresetRow>& table2_preset();

// Multiplier printed in the preset for (g, 1-based stage); 1.0 if absent.
double preset_multiplier(int g, int stage_1based,
                         const std::vector<PresetRow>& preset = table2_preset());

// InverseProb: a group holding k of a stage's n candidates gets
// max(1, round(beta * n / k)), capped. Preset: the newest singleton of each
// stage gets the published (g, stage) value, everything else 1; stages
// missing from the table fall back to InverseProb (error when strict).
LRPlan lr_multipliers(const GroupPlan& plan, LrRule rule,
                      const space::SearchSpace& sp,
                      const std::vector<PresetRow>& preset = table2_preset(),
                      double beta = 1.0, double cap = 8.0, bool strict = false);

Json plan_to_json(const GroupPlan& plan);
GroupPlan plan_from_json(const Json& j);
Json inheritance_to_json(const InheritanceMap& map);

}  // namespace fsnas::split
