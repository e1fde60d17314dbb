#include "fsnas/split_plan.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "fsnas/error.hpp"
#include "fsnas/supernet.hpp"

namespace fsnas::split {

void GroupPlan::validate(const space::SearchSpace& sp) const {
  check(stage_partitions.size() == sp.stages.size(), ErrorCode::Config,
        "plan stage count mismatch");
  check(num_groups >= 1, ErrorCode::Config, "plan num_groups must be >= 1");
  for (std::size_t s = 0; s < sp.stages.size(); ++s) {
    const auto cands = space::candidate_channels(sp.stages[s]);
    const auto& parts = stage_partitions[s];
    const std::string where = "plan stage " + std::to_string(s) + ": ";
    check(!parts.empty(), ErrorCode::Config, where + "no groups");
    check(static_cast<int>(parts.size()) ==
              std::min<int>(num_groups, static_cast<int>(cands.size())),
          ErrorCode::Config, where + "group count must be min(g, candidates)");
    std::set<int> seen;
    for (const auto& group : parts) {
      check(!group.empty(), ErrorCode::Config, where + "empty group");
      check(std::is_sorted(group.begin(), group.end()), ErrorCode::Config,
            where + "group candidates must be sorted");
      for (int c : group) {
        check(std::find(cands.begin(), cands.end(), c) != cands.end(),
              ErrorCode::Config,
              where + "unknown candidate " + std::to_string(c));
        check(seen.insert(c).second, ErrorCode::Config,
              where + "candidate " + std::to_string(c) + " in two groups");
      }
    }
    check(seen.size() == cands.size(), ErrorCode::Config,
          where + "groups must cover the candidate set");
  }
}

int GroupPlan::group_of(int stage, int candidate) const {
  const auto& parts = stage_partitions[static_cast<std::size_t>(stage)];
  for (std::size_t g = 0; g < parts.size(); ++g)
    if (std::find(parts[g].begin(), parts[g].end(), candidate) != parts[g].end())
      return static_cast<int>(g);
  raise(ErrorCode::Config, "candidate " + std::to_string(candidate) +
                               " not owned by any group of stage " +
                               std::to_string(stage));
}

GroupPlan initial_plan(const space::SearchSpace& sp) {
  GroupPlan plan;
  plan.num_groups = 1;
  for (const auto& st : sp.stages)
    plan.stage_partitions.push_back({space::candidate_channels(st)});
  return plan;
}

int max_groups(const space::SearchSpace& sp) {
  int m = 1;
  for (const auto& st : sp.stages)
    m = std::max(m, static_cast<int>(space::candidate_channels(st).size()));
  return m;
}

bool fully_split(const GroupPlan& plan, const space::SearchSpace& sp) {
  return plan.num_groups >= max_groups(sp);
}

GroupPlan next_split(const GroupPlan& plan, const space::SearchSpace& sp,
                     const std::map<int, int>& peel_override) {
  plan.validate(sp);
  check(!fully_split(plan, sp), ErrorCode::State,
        "plan already at the maximum group count");
  GroupPlan out = plan;
  out.num_groups = plan.num_groups + 1;
  for (std::size_t s = 0; s < out.stage_partitions.size(); ++s) {
    auto& parts = out.stage_partitions[s];
    auto& entangled = parts.back();
    if (entangled.size() < 2) continue;  // stage fully split already

    int candidate = entangled.back();  // default: peel the largest
    if (const auto it = peel_override.find(static_cast<int>(s));
        it != peel_override.end()) {
      check(std::find(entangled.begin(), entangled.end(), it->second) !=
                entangled.end(),
            ErrorCode::Usage,
            "peel override " + std::to_string(it->second) +
                " is not in the entangled group of stage " + std::to_string(s));
      candidate = it->second;
    }
    entangled.erase(std::find(entangled.begin(), entangled.end(), candidate));
    // singletons sit before the entangled remainder, in peel order
    parts.insert(parts.end() - 1, {candidate});
    out.history.push_back({static_cast<int>(s), candidate,
                           static_cast<int>(parts.size()) - 2});
  }
  return out;
}

namespace {

// Old group that owned every candidate of the new group (partition
// refinement guarantees it exists and is unique).
int source_group(const GroupPlan& old_plan, int stage,
                 const std::vector<int>& new_candidates) {
  return old_plan.group_of(stage, new_candidates.front());
}

std::string swap_group_name(const std::string& name, int stage, int old_group,
                            int new_group) {
  std::string from, to;
  if (name.rfind("head.", 0) == 0) {
    from = "head.group" + std::to_string(new_group) + ".";
    to = "head.group" + std::to_string(old_group) + ".";
  } else {
    from = "stage" + std::to_string(stage) + ".group" + std::to_string(new_group) + ".";
    to = "stage" + std::to_string(stage) + ".group" + std::to_string(old_group) + ".";
  }
  std::string out = name;
  const auto pos = out.find(from);
  check(pos != std::string::npos, ErrorCode::Usage,
        "cannot rewrite tensor name " + name);
  out.replace(pos, from.size(), to);
  return out;
}

}  // namespace

InheritanceMap inheritance_map(const GroupPlan& old_plan,
                               const GroupPlan& new_plan,
                               const space::SearchSpace& sp) {
  old_plan.validate(sp);
  new_plan.validate(sp);
  check(new_plan.num_groups == old_plan.num_groups + 1, ErrorCode::Usage,
        "plans are not adjacent");
  // adjacency: replaying the recorded peels on old_plan must give new_plan
  {
    std::map<int, int> peels;
    for (std::size_t i = old_plan.history.size(); i < new_plan.history.size(); ++i)
      peels[new_plan.history[i].stage] = new_plan.history[i].candidate;
    const GroupPlan replay = next_split(old_plan, sp, peels);
    check(replay.stage_partitions == new_plan.stage_partitions,
          ErrorCode::Usage, "new plan is not a split of the old plan");
  }

  const auto schema = net::tensor_schema(sp, new_plan);
  const int last_stage = static_cast<int>(sp.stages.size()) - 1;
  InheritanceMap map;
  for (const auto& ts : schema) {
    CopyRecord rec;
    rec.dst = ts.name;
    rec.prefix = ts.shape;
    if (ts.name.rfind("stem.", 0) == 0) {
      rec.src = ts.name;
    } else {
      int stage = 0, group = 0;
      if (ts.name.rfind("head.group", 0) == 0) {
        stage = last_stage;
        group = std::stoi(ts.name.substr(std::string("head.group").size()));
      } else {
        stage = std::stoi(ts.name.substr(std::string("stage").size()));
        const auto gpos = ts.name.find(".group");
        group = std::stoi(ts.name.substr(gpos + std::string(".group").size()));
      }
      const int src =
          source_group(old_plan, stage, new_plan.group_candidates(stage, group));
      rec.src = swap_group_name(ts.name, stage, src, group);
    }
    map.records.push_back(std::move(rec));
  }
  return map;
}

const std::vector<PresetRow>& table2_preset() {
  static const std::vector<PresetRow> rows = {
      {2, 1, 64, 2.0},  {2, 2, 128, 5.0}, {2, 3, 256, 6.0}, {2, 4, 512, 6.0},
      {3, 2, 112, 4.0}, {3, 3, 232, 5.0}, {3, 4, 464, 5.0},
      {4, 2, 104, 3.0}, {4, 3, 216, 4.0}, {4, 4, 432, 4.0},
      {5, 2, 96, 3.0},  {5, 3, 208, 4.0}, {5, 4, 408, 4.0},
      {6, 2, 88, 3.0},  {6, 3, 192, 4.0}, {6, 4, 384, 4.0},
  };
  return rows;
}

namespace {
const PresetRow* find_preset_row(int g, int stage_1based,
                                 const std::vector<PresetRow>& preset) {
  for (const auto& row : preset)
    if (row.group == g && row.stage == stage_1based) return &row;
  return nullptr;
}
}  // namespace

double preset_multiplier(int g, int stage_1based,
                         const std::vector<PresetRow>& preset) {
  const PresetRow* row = find_preset_row(g, stage_1based, preset);
  return row ? row->multiplier : 1.0;
}

namespace {

double inverse_prob_multiplier(int k, int n, double beta, double cap) {
  const double raw = std::max(1.0, std::round(beta * n / k));
  return std::min(raw, cap);
}

}  // namespace

LRPlan lr_multipliers(const GroupPlan& plan, LrRule rule,
                      const space::SearchSpace& sp,
                      const std::vector<PresetRow>& preset, double beta,
                      double cap, bool strict) {
  plan.validate(sp);
  LRPlan out;
  const int g_now = plan.num_groups;
  for (std::size_t s = 0; s < sp.stages.size(); ++s) {
    const int n = static_cast<int>(space::candidate_channels(sp.stages[s]).size());
    const int groups = plan.group_count(static_cast<int>(s));
    std::vector<double> mult(static_cast<std::size_t>(groups), 1.0);

    bool use_inverse = rule == LrRule::InverseProb;
    if (rule == LrRule::Preset && groups > 1) {
      const PresetRow* row =
          find_preset_row(g_now, static_cast<int>(s) + 1, preset);
      // the most recently peeled singleton of this stage
      int newest = -1;
      for (auto it = plan.history.rbegin(); it != plan.history.rend(); ++it)
        if (it->stage == static_cast<int>(s)) {
          newest = plan.group_of(static_cast<int>(s), it->candidate);
          break;
        }
      if (row != nullptr && newest >= 0) {
        mult[static_cast<std::size_t>(newest)] = row->multiplier;
      } else {
        check(!strict, ErrorCode::Config,
              "preset has no row for group " + std::to_string(g_now) +
                  ", stage " + std::to_string(s + 1));
        use_inverse = true;
      }
    }
    if (use_inverse) {
      for (int g = 0; g < groups; ++g)
        mult[static_cast<std::size_t>(g)] = inverse_prob_multiplier(
            static_cast<int>(plan.group_candidates(static_cast<int>(s), g).size()),
            n, beta, cap);
    }
    out.stage_group_mult.push_back(std::move(mult));
  }
  out.head_mult = out.stage_group_mult.back();
  return out;
}

Json plan_to_json(const GroupPlan& plan) {
  Json j;
  j["num_groups"] = plan.num_groups;
  j["stages"] = plan.stage_partitions;
  j["history"] = Json::array();
  for (const auto& e : plan.history)
    j["history"].push_back(
        {{"stage", e.stage}, {"candidate", e.candidate}, {"source_group", e.source_group}});
  return j;
}

GroupPlan plan_from_json(const Json& j) {
  GroupPlan plan;
  try {
    plan.num_groups = j.at("num_groups").get<int>();
    plan.stage_partitions =
        j.at("stages").get<std::vector<std::vector<std::vector<int>>>>();
    for (const auto& e : j.at("history"))
      plan.history.push_back({e.at("stage").get<int>(), e.at("candidate").get<int>(),
                              e.at("source_group").get<int>()});
  } catch (const Json::exception& e) {
    raise(ErrorCode::Parse, std::string("group plan json: ") + e.what());
  }
  return plan;
}

Json inheritance_to_json(const InheritanceMap& map) {
  Json j = Json::array();
  for (const auto& r : map.records)
    j.push_back({{"dst", r.dst}, {"src", r.src}, {"prefix", r.prefix}});
  return j;
}

}  // namespace fsnas::split
