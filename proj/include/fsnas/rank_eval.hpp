#pragma once

#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "fsnas/augment.hpp"
#include "fsnas/dataset.hpp"
#include "fsnas/json_io.hpp"
#include "fsnas/supernet.hpp"
#include "fsnas/trainer.hpp"

namespace fsnas::eval {

struct EvalSet {
  std::vector<space::Architecture> archs;
  std::vector<double> oracle_acc;  // empty until oracles ran; else parallel
  std::string provenance;          // hash of oracle config + data

  bool has_oracles() const { return oracle_acc.size() == archs.size(); }
};

// Distinct architectures sampled uniformly from the space.
EvalSet sample_eval_set(const space::SearchSpace& sp, int count,
                        std::uint64_t seed);

Json eval_set_to_json(const EvalSet& set, const space::SearchSpace& sp);
EvalSet eval_set_from_json(const Json& j, const space::SearchSpace& sp);

struct OracleConfig {
  train::TrainConfig train;        // plain CE SGD budget (default 15 epochs)
  data::AugmentConfig augment;

  OracleConfig() {
    train.epochs = 15;
    train.num_random_subnets = 0;
    train.dropout_p = 0.0;
  }
};

std::string oracle_provenance(const OracleConfig& cfg,
                              const space::SearchSpace& sp,
                              const data::Dataset& ds);

// Standalone-from-scratch accuracy of one architecture: fresh net with the
// shared init scheme (seed derived from the architecture hash), trained on
// the train split, scored on the val split. Deterministic per (arch, seed).
double oracle_train(const space::SearchSpace& sp,
                    const space::Architecture& arch, const data::Dataset& ds,
                    const OracleConfig& cfg);

// Fills set.oracle_acc, fanning out across `jobs` threads (each oracle is
// independent and internally sequential, so results do not depend on jobs).
void run_oracles(EvalSet& set, const space::SearchSpace& sp,
                 const data::Dataset& ds, const OracleConfig& cfg, int jobs);

struct EvalCfg {
  int recalib_batches = 20;
  int batch_size = 64;
  std::uint64_t seed = 1;
};

// Per-arch accuracy inherited from the super-net: recalibrate BN along the
// routed path on the train split, extract, score on `eval_indices`.
std::vector<double> inherited_eval(const net::SuperNet& net,
                                   const std::vector<space::Architecture>& archs,
                                   const data::Dataset& ds,
                                   const std::vector<int>& eval_indices,
                                   const EvalCfg& cfg);

struct RankReport {
  int n = 0;
  double pearson = std::numeric_limits<double>::quiet_NaN();
  double kendall = std::numeric_limits<double>::quiet_NaN();
  std::vector<std::string> archs;  // canonical encodings
  std::vector<double> oracle_acc;
  std::vector<double> inherited_acc;
  Json metadata;
};

RankReport rank_report(const EvalSet& set, const net::SuperNet& net,
                       const data::Dataset& ds,
                       const std::vector<int>& eval_indices,
                       const EvalCfg& cfg);

Json rank_report_to_json(const RankReport& r);
RankReport rank_report_from_json(const Json& j);
std::string rank_report_to_csv(const RankReport& r);

struct TraceEntry {
  int epoch = 0;
  double kendall = std::numeric_limits<double>::quiet_NaN();
  double mean_inherited_acc = 0.0;
};

Json trace_to_json(const std::vector<TraceEntry>& trace);
std::vector<TraceEntry> trace_from_json(const Json& j);
std::string trace_to_csv(const std::vector<TraceEntry>& trace);

// Per-epoch hook: inherited accuracies of the eval set on a fixed data
// subset, Kendall tau against the oracles, appended to `trace`. Returns the
// tau (NaN when degenerate, e.g. all accuracies tied).
std::function<double(net::SuperNet&, int)> make_epoch_hook(
    const EvalSet& set, const data::Dataset& subset_ds, const EvalCfg& cfg,
    std::vector<TraceEntry>& trace);

// Largest tau wins; ties break toward the later epoch; NaNs never win.
// Returns the last epoch when every entry is NaN.
int select_checkpoint(const std::vector<TraceEntry>& trace);

struct AblationRow {
  std::string sampler;
  RankReport report;
};

// Trains two one-shot super-nets differing only in the subnet sampler and
// reports both correlations side by side. No winner is asserted.
std::vector<AblationRow> sampling_ablation(
    const space::SearchSpace& sp, const data::Dataset& ds,
    const train::TrainConfig& cfg_uniform, const train::TrainConfig& cfg_fair,
    const data::AugmentConfig& aug, const EvalSet& set,
    const std::vector<int>& eval_indices, const EvalCfg& eval_cfg,
    std::uint64_t build_seed);

}  // namespace fsnas::eval
