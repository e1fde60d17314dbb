#include "fsnas/rank_eval.hpp"

#include <atomic>
#include <cmath>
#include <set>
#include <sstream>
#include <thread>

#include "fsnas/error.hpp"
#include "fsnas/hash.hpp"
#include "fsnas/stats.hpp"

namespace fsnas::eval {

EvalSet sample_eval_set(const space::SearchSpace& sp, int count,
                        std::uint64_t seed) {
  check(count >= 1, ErrorCode::Config, "eval set needs >= 1 architecture");
  const auto total = space::space_size(sp);
  check(!(total == space::BigUint(static_cast<std::uint64_t>(0))),
        ErrorCode::Config, "empty search space");
  EvalSet set;
  Rng rng = Rng(seed).split("eval-set");
  std::set<std::string> seen;
  int guard = 0;
  while (static_cast<int>(set.archs.size()) < count) {
    check(++guard < count * 1000, ErrorCode::Config,
          "space too small for the requested number of distinct architectures");
    auto arch = space::sample_uniform(sp, rng);
    if (seen.insert(space::encode(sp, arch)).second)
      set.archs.push_back(std::move(arch));
  }
  return set;
}

Json eval_set_to_json(const EvalSet& set, const space::SearchSpace& sp) {
  Json j;
  j["provenance"] = set.provenance;
  j["archs"] = Json::array();
  for (std::size_t i = 0; i < set.archs.size(); ++i) {
    Json row;
    row["arch"] = space::encode(sp, set.archs[i]);
    if (set.has_oracles()) row["oracle_acc"] = set.oracle_acc[i];
    j["archs"].push_back(std::move(row));
  }
  return j;
}

EvalSet eval_set_from_json(const Json& j, const space::SearchSpace& sp) {
  EvalSet set;
  try {
    set.provenance = j.value("provenance", "");
    for (const auto& row : j.at("archs")) {
      set.archs.push_back(space::decode(sp, row.at("arch").get<std::string>()));
      if (row.contains("oracle_acc"))
        set.oracle_acc.push_back(row.at("oracle_acc").get<double>());
    }
  } catch (const Json::exception& e) {
    raise(ErrorCode::Parse, std::string("eval set json: ") + e.what());
  }
  check(set.oracle_acc.empty() || set.has_oracles(), ErrorCode::Parse,
        "eval set json must give oracle accuracies for all or no archs");
  for (double a : set.oracle_acc)
    check(a >= 0.0 && a <= 1.0, ErrorCode::Parse,
          "oracle accuracy outside [0,1]");
  return set;
}

std::string oracle_provenance(const OracleConfig& cfg,
                              const space::SearchSpace& sp,
                              const data::Dataset& ds) {
  ContentHasher h;
  h.update(train::train_config_to_json(cfg.train).dump());
  h.update_pod(cfg.augment.enabled);
  h.update_pod(cfg.augment.brightness_contrast_prob);
  h.update_pod(cfg.augment.max_rotation_deg);
  h.update_pod(cfg.augment.crop_padding);
  h.update(space::space_to_json(sp).dump());
  h.update_pod(ds.content_hash());
  return h.hex();
}

double oracle_train(const space::SearchSpace& sp,
                    const space::Architecture& arch, const data::Dataset& ds,
                    const OracleConfig& cfg) {
  cfg.train.validate();
  const std::uint64_t arch_seed =
      space::arch_hash(sp, arch) ^ (cfg.train.seed * 0x9e3779b97f4a7c15ull);
  auto net = net::build_subnetwork(sp, arch, arch_seed);
  train::TrainConfig tc = cfg.train;
  tc.seed = arch_seed;
  train::train_subnetwork(net, ds, tc, cfg.augment);
  return net::evaluate_accuracy(net, ds, ds.indices_of(data::Split::Val),
                                cfg.train.batch_size);
}

void run_oracles(EvalSet& set, const space::SearchSpace& sp,
                 const data::Dataset& ds, const OracleConfig& cfg, int jobs) {
  check(jobs >= 1, ErrorCode::Config, "jobs must be >= 1");
  set.oracle_acc.assign(set.archs.size(), 0.0);
  set.provenance = oracle_provenance(cfg, sp, ds);
  std::atomic<std::size_t> cursor{0};
  auto worker = [&] {
    while (true) {
      const std::size_t i = cursor.fetch_add(1);
      if (i >= set.archs.size()) return;
      set.oracle_acc[i] = oracle_train(sp, set.archs[i], ds, cfg);
    }
  };
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < jobs; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
}

std::vector<double> inherited_eval(const net::SuperNet& net,
                                   const std::vector<space::Architecture>& archs,
                                   const data::Dataset& ds,
                                   const std::vector<int>& eval_indices,
                                   const EvalCfg& cfg) {
  check(!archs.empty(), ErrorCode::Usage, "inherited_eval on an empty set");
  // shares parameters with the source, owns its BN statistics
  net::SuperNet work = net;
  const auto train_idx = ds.indices_of(data::Split::Train);
  std::vector<double> out;
  out.reserve(archs.size());
  for (const auto& arch : archs) {
    net::bn_recalibrate(work, arch, ds, train_idx, cfg.batch_size,
                        cfg.recalib_batches, cfg.seed);
    auto sub = net::extract_subnet(work, arch);
    out.push_back(net::evaluate_accuracy(sub, ds, eval_indices, cfg.batch_size));
  }
  return out;
}

RankReport rank_report(const EvalSet& set, const net::SuperNet& net,
                       const data::Dataset& ds,
                       const std::vector<int>& eval_indices,
                       const EvalCfg& cfg) {
  check(set.has_oracles(), ErrorCode::Usage,
        "rank_report needs oracle accuracies");
  RankReport r;
  r.n = static_cast<int>(set.archs.size());
  r.oracle_acc = set.oracle_acc;
  r.inherited_acc = inherited_eval(net, set.archs, ds, eval_indices, cfg);
  for (const auto& a : set.archs) r.archs.push_back(space::encode(net.space, a));
  r.pearson = pearson(r.oracle_acc, r.inherited_acc);
  r.kendall = kendall_tau(r.oracle_acc, r.inherited_acc);
  r.metadata = Json{{"recalib_batches", cfg.recalib_batches},
                    {"batch_size", cfg.batch_size},
                    {"seed", cfg.seed},
                    {"eval_items", eval_indices.size()},
                    {"provenance", set.provenance}};
  return r;
}

Json rank_report_to_json(const RankReport& r) {
  Json pairs = Json::array();
  for (std::size_t i = 0; i < r.archs.size(); ++i)
    pairs.push_back({{"arch", r.archs[i]},
                     {"oracle_acc", r.oracle_acc[i]},
                     {"inherited_acc", r.inherited_acc[i]}});
  return Json{{"n", r.n},
              {"pearson", r.pearson},
              {"kendall_tau", r.kendall},
              {"pairs", std::move(pairs)},
              {"metadata", r.metadata}};
}

RankReport rank_report_from_json(const Json& j) {
  RankReport r;
  try {
    r.n = j.at("n").get<int>();
    r.pearson = j.at("pearson").get<double>();
    r.kendall = j.at("kendall_tau").get<double>();
    for (const auto& p : j.at("pairs")) {
      r.archs.push_back(p.at("arch").get<std::string>());
      r.oracle_acc.push_back(p.at("oracle_acc").get<double>());
      r.inherited_acc.push_back(p.at("inherited_acc").get<double>());
    }
    r.metadata = j.value("metadata", Json::object());
  } catch (const Json::exception& e) {
    raise(ErrorCode::Parse, std::string("rank report json: ") + e.what());
  }
  return r;
}

std::string rank_report_to_csv(const RankReport& r) {
  std::ostringstream out;
  out << "arch,oracle_acc,inherited_acc\n";
  for (std::size_t i = 0; i < r.archs.size(); ++i)
    out << r.archs[i] << "," << r.oracle_acc[i] << "," << r.inherited_acc[i]
        << "\n";
  return out.str();
}

Json trace_to_json(const std::vector<TraceEntry>& trace) {
  Json j = Json::array();
  for (const auto& t : trace)
    j.push_back({{"epoch", t.epoch},
                 {"kendall_tau", std::isnan(t.kendall) ? Json(nullptr) : Json(t.kendall)},
                 {"mean_inherited_acc", t.mean_inherited_acc}});
  return j;
}

std::vector<TraceEntry> trace_from_json(const Json& j) {
  std::vector<TraceEntry> out;
  try {
    for (const auto& row : j) {
      TraceEntry t;
      t.epoch = row.at("epoch").get<int>();
      t.kendall = row.at("kendall_tau").is_null()
                      ? std::numeric_limits<double>::quiet_NaN()
                      : row.at("kendall_tau").get<double>();
      t.mean_inherited_acc = row.at("mean_inherited_acc").get<double>();
      out.push_back(t);
    }
  } catch (const Json::exception& e) {
    raise(ErrorCode::Parse, std::string("trace json: ") + e.what());
  }
  return out;
}

std::string trace_to_csv(const std::vector<TraceEntry>& trace) {
  std::ostringstream out;
  out << "epoch,kendall_tau,mean_inherited_acc\n";
  for (const auto& t : trace) {
    out << t.epoch << ",";
    if (std::isnan(t.kendall))
      out << "nan";
    else
      out << t.kendall;
    out << "," << t.mean_inherited_acc << "\n";
  }
  return out.str();
}

std::function<double(net::SuperNet&, int)> make_epoch_hook(
    const EvalSet& set, const data::Dataset& subset_ds, const EvalCfg& cfg,
    std::vector<TraceEntry>& trace) {
  check(set.has_oracles(), ErrorCode::Usage,
        "epoch hook needs oracle accuracies");
  std::vector<int> eval_idx(static_cast<std::size_t>(subset_ds.size()));
  for (int i = 0; i < subset_ds.size(); ++i)
    eval_idx[static_cast<std::size_t>(i)] = i;
  return [&set, subset_ds, cfg, eval_idx, &trace](net::SuperNet& snapshot,
                                                  int epoch) {
    const auto accs =
        inherited_eval(snapshot, set.archs, subset_ds, eval_idx, cfg);
    TraceEntry t;
    t.epoch = epoch;
    double mean = 0.0;
    for (double a : accs) mean += a;
    t.mean_inherited_acc = mean / static_cast<double>(accs.size());
    try {
      t.kendall = kendall_tau(set.oracle_acc, accs);
    } catch (const Error&) {
      t.kendall = std::numeric_limits<double>::quiet_NaN();
    }
    trace.push_back(t);
    return t.kendall;
  };
}

int select_checkpoint(const std::vector<TraceEntry>& trace) {
  check(!trace.empty(), ErrorCode::Usage, "select_checkpoint on empty trace");
  int best = trace.back().epoch;
  double best_tau = -std::numeric_limits<double>::infinity();
  bool found = false;
  for (const auto& t : trace) {
    if (std::isnan(t.kendall)) continue;
    if (t.kendall >= best_tau) {
      best_tau = t.kendall;
      best = t.epoch;
      found = true;
    }
  }
  return found ? best : trace.back().epoch;
}

std::vector<AblationRow> sampling_ablation(
    const space::SearchSpace& sp, const data::Dataset& ds,
    const train::TrainConfig& cfg_uniform, const train::TrainConfig& cfg_fair,
    const data::AugmentConfig& aug, const EvalSet& set,
    const std::vector<int>& eval_indices, const EvalCfg& eval_cfg,
    std::uint64_t build_seed) {
  check(cfg_uniform.sampler == "uniform" && cfg_fair.sampler == "fair",
        ErrorCode::Config, "ablation configs must use uniform and fair samplers");
  train::TrainConfig u = cfg_uniform, f = cfg_fair;
  f.sampler = "uniform";
  check(train::train_config_to_json(u).dump() ==
            train::train_config_to_json(f).dump(),
        ErrorCode::Config, "ablation configs may differ only in the sampler");
  f.sampler = "fair";

  std::vector<AblationRow> rows;
  for (const auto* cfg : {&cfg_uniform, &cfg_fair}) {
    auto net = net::build_supernet(sp, split::initial_plan(sp), build_seed);
    train::train_one_shot(net, ds, *cfg, aug, {});
    AblationRow row;
    row.sampler = cfg->sampler;
    row.report = rank_report(set, net, ds, eval_indices, eval_cfg);
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace fsnas::eval
