#include <doctest.h>

#include "fsnas/error.hpp"
#include "fsnas/json_io.hpp"
#include "fsnas/split_plan.hpp"
#include "fsnas/supernet.hpp"

using namespace fsnas;
using namespace fsnas::split;

namespace {

const char* kPresetDir = FSNAS_SOURCE_DIR "/presets/";

space::SearchSpace desk() {
  return space::load_space_file(std::string(kPresetDir) + "desk-small.json");
}
space::SearchSpace track1() {
  return space::load_space_file(std::string(kPresetDir) + "resnet48-track1.json");
}

void perturb_params(net::SuperNet& n, std::uint64_t seed) {
  Rng rng(seed);
  for (auto& p : n.parameters())
    for (auto& v : p.tensor.values()) v += static_cast<float>(rng.uniform(-0.05, 0.05));
}

TensorF random_batch(int n, int res, std::uint64_t seed) {
  Rng rng(seed);
  TensorF t({n, 3, res, res});
  for (auto& v : t.values()) v = static_cast<float>(rng.uniform(0.0, 1.0));
  return t;
}

}  // namespace

TEST_CASE("initial plan has one all-candidate group per stage") {
  const auto sp = track1();
  const auto plan = initial_plan(sp);
  CHECK(plan.num_groups == 1);
  CHECK(plan.history.empty());
  std::vector<std::size_t> sizes;
  for (std::size_t s = 0; s < sp.stages.size(); ++s) {
    CHECK(plan.group_count(static_cast<int>(s)) == 1);
    sizes.push_back(plan.group_candidates(static_cast<int>(s), 0).size());
  }
  CHECK(sizes == std::vector<std::size_t>({3, 6, 7, 7}));

  const auto d = desk();
  const auto dplan = initial_plan(d);
  CHECK(dplan.group_candidates(0, 0) == std::vector<int>({4, 6, 8}));
  CHECK(dplan.group_candidates(1, 0) == std::vector<int>({8, 12, 16}));
}

TEST_CASE("next_split peels the largest candidate everywhere") {
  const auto sp = track1();
  auto plan = next_split(initial_plan(sp), sp);
  CHECK(plan.num_groups == 2);
  CHECK(plan.group_candidates(1, 0) == std::vector<int>({128}));
  CHECK(plan.group_candidates(1, 1) == std::vector<int>({88, 96, 104, 112, 120}));
  CHECK(plan.history.size() == 4);  // every stage peeled
  for (const auto& e : plan.history) CHECK(e.source_group == 0);

  // walk to the maximum and verify the cap rule along the way
  int g = 2;
  while (!fully_split(plan, sp)) {
    plan = next_split(plan, sp);
    ++g;
    plan.validate(sp);
    if (g > 3) CHECK(plan.group_count(0) == 3);  // stage 1 stops at 3
  }
  CHECK(g == 7);
  CHECK(plan.num_groups == 7);
  std::vector<int> counts;
  for (std::size_t s = 0; s < sp.stages.size(); ++s)
    counts.push_back(plan.group_count(static_cast<int>(s)));
  CHECK(counts == std::vector<int>({3, 6, 7, 7}));
  CHECK_THROWS_AS(next_split(plan, sp), Error);
  try {
    next_split(plan, sp);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::State);
  }
}

TEST_CASE("peel override picks an explicit candidate") {
  const auto sp = track1();
  auto plan = next_split(initial_plan(sp), sp, {{1, 112}});
  CHECK(plan.group_candidates(1, 0) == std::vector<int>({112}));
  CHECK(plan.group_candidates(1, 1) ==
        std::vector<int>({88, 96, 104, 120, 128}));
  CHECK_THROWS_AS(next_split(plan, sp, {{1, 112}}), Error);  // already peeled
}

TEST_CASE("inheritance map covers every destination exactly once") {
  const auto sp = desk();
  const auto p1 = initial_plan(sp);
  const auto p2 = next_split(p1, sp);
  const auto map = inheritance_map(p1, p2, sp);
  const auto schema = net::tensor_schema(sp, p2);
  REQUIRE(map.records.size() == schema.size());
  for (std::size_t i = 0; i < schema.size(); ++i) {
    CHECK(map.records[i].dst == schema[i].name);
    CHECK(map.records[i].prefix == schema[i].shape);
  }
  // the peeled singleton {8} copies from the old single group 0
  bool found = false;
  for (const auto& r : map.records)
    if (r.dst == "stage0.group0.block0.conv2.weight") {
      CHECK(r.src == "stage0.group0.block0.conv2.weight");
      found = true;
    }
  CHECK(found);

  const auto p3 = next_split(p2, sp);
  CHECK_THROWS_AS(inheritance_map(p1, p3, sp), Error);  // not adjacent
}

TEST_CASE("split-then-inherit preserves every architecture's logits bitwise") {
  const auto sp = desk();
  auto p1 = initial_plan(sp);
  auto net1 = net::build_supernet(sp, p1, 51);
  perturb_params(net1, 52);

  auto plan = p1;
  auto prev = std::move(net1);
  const auto batch = random_batch(4, sp.input_resolution, 53);
  while (!fully_split(plan, sp)) {
    const auto next = next_split(plan, sp);
    auto net2 = net::build_supernet(sp, next, 54);
    const auto map = inheritance_map(plan, next, sp);
    net::apply_inheritance(net2, prev, map);

    Rng rng(55);
    for (int i = 0; i < 25; ++i) {
      const auto arch = space::sample_uniform(sp, rng);
      CHECK(net::forward(net2, arch, batch, BnMode::Eval).values() ==
            net::forward(prev, arch, batch, BnMode::Eval).values());
    }
    plan = next;
    prev = std::move(net2);
  }
  CHECK(plan.num_groups == 3);
}

TEST_CASE("table2 preset lookups") {
  CHECK(preset_multiplier(3, 2) == 4.0);
  CHECK(preset_multiplier(2, 1) == 2.0);
  CHECK(preset_multiplier(2, 3) == 6.0);
  CHECK(preset_multiplier(5, 4) == 4.0);
  CHECK(preset_multiplier(7, 2) == 1.0);  // absent
  const auto& rows = table2_preset();
  CHECK(rows.size() == 16);
}

TEST_CASE("lr multipliers: inverse_prob rule") {
  const auto sp = track1();
  const auto p1 = initial_plan(sp);
  auto lr1 = lr_multipliers(p1, LrRule::InverseProb, sp);
  for (const auto& stage : lr1.stage_group_mult)
    for (double m : stage) CHECK(m == 1.0);
  for (double m : lr1.head_mult) CHECK(m == 1.0);

  const auto p2 = next_split(p1, sp);
  auto lr2 = lr_multipliers(p2, LrRule::InverseProb, sp);
  // stage 2: singleton {128} of 6 candidates -> 6x; entangled 5-of-6 -> 1x
  CHECK(lr2.group(1, 0) == 6.0);
  CHECK(lr2.group(1, 1) == 1.0);
  // stage 1: singleton of 3 -> 3x, entangled 2-of-3 -> round(1.5)=2x
  CHECK(lr2.group(0, 0) == 3.0);
  CHECK(lr2.group(0, 1) == 2.0);
  // heads follow the last stage: singleton of 7 -> 7x
  CHECK(lr2.head(0) == 7.0);

  // fully split: every singleton gets n x, capped at 8
  auto full = p2;
  while (!fully_split(full, sp)) full = next_split(full, sp);
  auto lrf = lr_multipliers(full, LrRule::InverseProb, sp);
  for (double m : lrf.stage_group_mult[1]) CHECK(m == 6.0);
  for (double m : lrf.stage_group_mult[2]) CHECK(m == 7.0);
  // cap: a 9-candidate stage would clamp at 8 (exercise via beta)
  auto lrcap = lr_multipliers(p2, LrRule::InverseProb, sp, table2_preset(), 2.0, 8.0);
  CHECK(lrcap.group(1, 0) == 8.0);  // 2*6 capped
}

TEST_CASE("lr multipliers: preset rule boosts the newest singleton") {
  const auto sp = track1();
  auto plan = next_split(initial_plan(sp), sp);  // g=2
  auto lr = lr_multipliers(plan, LrRule::Preset, sp);
  CHECK(lr.group(0, 0) == 2.0);  // stage 1 row: 2x
  CHECK(lr.group(1, 0) == 5.0);  // stage 2 row: 5x
  CHECK(lr.group(2, 0) == 6.0);
  CHECK(lr.group(3, 0) == 6.0);
  CHECK(lr.group(1, 1) == 1.0);  // entangled stays at base

  plan = next_split(plan, sp);  // g=3
  lr = lr_multipliers(plan, LrRule::Preset, sp);
  CHECK(lr.group(1, 1) == 4.0);   // newest stage-2 singleton gets the 4x row
  CHECK(lr.group(1, 0) == 1.0);   // older singleton back to base
  // stage 1 is fully split at g=3 and the table has no row: falls back
  CHECK(lr.group(0, 0) == 3.0);
  CHECK_THROWS_AS(
      lr_multipliers(plan, LrRule::Preset, sp, table2_preset(), 1.0, 8.0, true),
      Error);

  // one-group plan: everything at base LR
  auto lr1 = lr_multipliers(initial_plan(sp), LrRule::Preset, sp);
  for (const auto& stage : lr1.stage_group_mult)
    for (double m : stage) CHECK(m == 1.0);
}

TEST_CASE("plan json round trip") {
  const auto sp = desk();
  auto plan = next_split(next_split(initial_plan(sp), sp), sp);
  const auto j = plan_to_json(plan);
  const auto back = plan_from_json(j);
  CHECK(back == plan);
  back.validate(sp);
  const auto map = inheritance_map(next_split(initial_plan(sp), sp), plan, sp);
  const auto mj = inheritance_to_json(map);
  CHECK(mj.size() == map.records.size());
}
