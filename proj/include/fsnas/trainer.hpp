#pragma once

#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "fsnas/augment.hpp"
#include "fsnas/dataset.hpp"
#include "fsnas/json_io.hpp"
#include "fsnas/schedule.hpp"
#include "fsnas/split_plan.hpp"
#include "fsnas/supernet.hpp"

namespace fsnas::train {

struct TrainConfig {
  int epochs = 1;
  int batch_size = 64;
  double base_lr = 0.05;
  int warmup_epochs = 0;
  double momentum = 0.9;
  double weight_decay = 1e-5;
  double dropout_p = 0.2;
  int num_random_subnets = 2;
  std::string sampler = "uniform";  // uniform | fair
  std::uint64_t seed = 1;

  void validate() const;
};

Json train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const Json& j);

class ArchSampler {
 public:
  virtual ~ArchSampler() = default;
  virtual space::Architecture next(Rng& rng) = 0;
  virtual std::string name() const = 0;
};

// `kind` is "uniform" or "fair"; fair refills itself one fairness round at a
// time, so exhaustion never surfaces to the caller.
std::unique_ptr<ArchSampler> make_sampler(const std::string& kind,
                                          const space::SearchSpace& sp,
                                          int fair_round_cap = 64);

// SGD with classical momentum: v <- m*v + g; w <- w - lr*v. Parameters never
// touched in a step keep both weights and momentum buffers unchanged.
class SgdMomentum {
 public:
  SgdMomentum(std::vector<TensorF> params, double momentum);

  std::size_t size() const { return params_.size(); }
  void zero_grads();
  // -1 when the tensor is not a registered parameter
  std::ptrdiff_t index_of(const TensorData<float>* t) const;
  void step(const std::vector<char>& touched, const std::vector<double>& eff_lr);
  long step_count() const { return step_count_; }
  TensorF param(std::size_t i) { return params_[i]; }
  const std::vector<float>& momentum_buffer(std::size_t i) const {
    return buffers_[i];
  }

 private:
  std::vector<TensorF> params_;
  std::vector<std::vector<float>> buffers_;
  std::unordered_map<const TensorData<float>*, std::size_t> index_;
  double momentum_;
  long step_count_ = 0;
};

struct PassRecord {
  std::string kind;  // largest | random | smallest
  space::Architecture arch;
  double loss = 0.0;
  bool dropout_active = false;
  bool weight_decay_applied = false;
};

struct StepReport {
  std::vector<PassRecord> passes;
  long step_index = 0;
  double lr_base = 0.0;
  std::uint64_t dropout_seed = 0;
};

// One sandwich pass: forward + backward, gradients accumulated into the
// shared parameter grads, touched parameters flagged. The largest pass
// trains against labels with dropout and weight decay; every other pass
// distills against the cached teacher logits.
double run_training_pass(net::SuperNet& net, const std::string& kind,
                         const space::Architecture& arch, const TensorF& images,
                         const std::vector<int>& labels,
                         const TensorF* teacher_logits, const TrainConfig& cfg,
                         std::uint64_t dropout_seed, SgdMomentum& opt,
                         std::vector<char>& touched, TensorF* teacher_out);

// Algorithm: zero grads; largest subnet with cross-entropy (teacher cached
// detached); num_random_subnets sampled subnets then the smallest, each
// distilled against the teacher; one optimizer update from the accumulated
// gradients with per-group learning-rate multipliers.
StepReport train_step(net::SuperNet& net, const TensorF& images,
                      const std::vector<int>& labels, const TrainConfig& cfg,
                      ArchSampler& sampler, Rng& sampler_rng, SgdMomentum& opt,
                      const std::vector<double>& param_mult, long step,
                      long total_steps, long warmup_steps);

// Effective per-parameter multiplier vector for this net under the plan.
std::vector<double> param_multipliers(net::SuperNet& net,
                                      const split::LRPlan& lr_plan);

struct EpochStats {
  int epoch = 0;
  long step = 0;
  double lr = 0.0;
  double loss_ce = 0.0;
  double loss_kl_mean = 0.0;
  double kendall_proxy = std::numeric_limits<double>::quiet_NaN();
};

struct EpochHooks {
  // runs on a copy-safe snapshot after each epoch; returns the proxy tau
  std::function<double(net::SuperNet&, int epoch)> on_epoch;
  std::string checkpoint_dir;  // per-epoch checkpoints when non-empty
  std::string metrics_csv;     // appended per epoch when non-empty
};

// Shared epoch loop. Warmup comes from cfg for the one-shot stage and is
// forced off for few-shot stages; multipliers follow the LR plan.
std::vector<EpochStats> train_loop(net::SuperNet& net, const data::Dataset& ds,
                                   const TrainConfig& cfg,
                                   const data::AugmentConfig& aug,
                                   const split::LRPlan& lr_plan,
                                   bool use_warmup, const EpochHooks& hooks);

std::vector<EpochStats> train_one_shot(net::SuperNet& net,
                                       const data::Dataset& ds,
                                       const TrainConfig& cfg,
                                       const data::AugmentConfig& aug,
                                       const EpochHooks& hooks);

std::vector<EpochStats> train_few_shot_stage(net::SuperNet& net,
                                             const data::Dataset& ds,
                                             const TrainConfig& cfg,
                                             const data::AugmentConfig& aug,
                                             const split::LRPlan& lr_plan,
                                             const EpochHooks& hooks);

// Plain cross-entropy SGD for a standalone network (oracle training).
void train_subnetwork(net::SubNetwork& net, const data::Dataset& ds,
                      const TrainConfig& cfg, const data::AugmentConfig& aug);

struct StageOutcome {
  int groups = 1;
  std::string dir;
  std::vector<EpochStats> stats;
  int selected_epoch = -1;
  double selected_proxy = std::numeric_limits<double>::quiet_NaN();
  std::string selected_prefix;
  bool resumed = false;
};

struct ProgressiveConfig {
  TrainConfig one_shot;
  TrainConfig few_shot;
  data::AugmentConfig augment;
  split::LrRule lr_rule = split::LrRule::InverseProb;
  double lr_beta = 1.0;
  double lr_cap = 8.0;
  bool lr_strict = false;
  int schedule_max = 0;  // 0 = split until every stage is fully split
  std::uint64_t build_seed = 1;
};

// One-shot stage followed by split -> inherit -> few-shot stages, one
// checkpoint set per group count. Stages with a completion marker in
// out_dir are skipped and their selected checkpoint reloaded (resume).
std::vector<StageOutcome> progressive_run(
    const space::SearchSpace& sp, const data::Dataset& ds,
    const ProgressiveConfig& cfg, const std::string& out_dir,
    const std::function<EpochHooks(int g, const std::string& stage_dir)>&
        stage_hooks,
    const std::function<int(const std::vector<EpochStats>&)>& select_epoch,
    const std::function<void(net::SuperNet& pre, net::SuperNet& post, int g)>&
        after_split);

}  // namespace fsnas::train
