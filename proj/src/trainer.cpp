#include "fsnas/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <filesystem>
#include <fstream>

#include "fsnas/checkpoint.hpp"
#include "fsnas/error.hpp"

namespace fsnas::train {

void TrainConfig::validate() const {
  check(epochs >= 1, ErrorCode::Config, "epochs must be >= 1");
  check(batch_size >= 1, ErrorCode::Config, "batch_size must be >= 1");
  check(base_lr > 0.0, ErrorCode::Config, "base_lr must be > 0");
  check(warmup_epochs >= 0 && warmup_epochs < epochs, ErrorCode::Config,
        "warmup_epochs must lie in [0, epochs)");
  check(momentum >= 0.0 && momentum < 1.0, ErrorCode::Config,
        "momentum must lie in [0, 1)");
  check(weight_decay >= 0.0, ErrorCode::Config, "weight_decay must be >= 0");
  check(dropout_p >= 0.0 && dropout_p < 1.0, ErrorCode::Config,
        "dropout_p must lie in [0, 1)");
  check(num_random_subnets >= 0, ErrorCode::Config,
        "num_random_subnets must be >= 0");
  check(sampler == "uniform" || sampler == "fair", ErrorCode::Config,
        "sampler must be 'uniform' or 'fair'");
}

Json train_config_to_json(const TrainConfig& cfg) {
  return Json{{"epochs", cfg.epochs},
              {"batch_size", cfg.batch_size},
              {"base_lr", cfg.base_lr},
              {"warmup_epochs", cfg.warmup_epochs},
              {"momentum", cfg.momentum},
              {"weight_decay", cfg.weight_decay},
              {"dropout_p", cfg.dropout_p},
              {"num_random_subnets", cfg.num_random_subnets},
              {"sampler", cfg.sampler},
              {"seed", cfg.seed}};
}

TrainConfig train_config_from_json(const Json& j) {
  TrainConfig cfg;
  try {
    cfg.epochs = j.value("epochs", cfg.epochs);
    cfg.batch_size = j.value("batch_size", cfg.batch_size);
    cfg.base_lr = j.value("base_lr", cfg.base_lr);
    cfg.warmup_epochs = j.value("warmup_epochs", cfg.warmup_epochs);
    cfg.momentum = j.value("momentum", cfg.momentum);
    cfg.weight_decay = j.value("weight_decay", cfg.weight_decay);
    cfg.dropout_p = j.value("dropout_p", cfg.dropout_p);
    cfg.num_random_subnets = j.value("num_random_subnets", cfg.num_random_subnets);
    cfg.sampler = j.value("sampler", cfg.sampler);
    cfg.seed = j.value("seed", cfg.seed);
  } catch (const Json::exception& e) {
    raise(ErrorCode::Parse, std::string("train config json: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

namespace {

class UniformArchSampler final : public ArchSampler {
 public:
  explicit UniformArchSampler(const space::SearchSpace& sp) : sp_(sp) {}
  space::Architecture next(Rng& rng) override {
    return space::sample_uniform(sp_, rng);
  }
  std::string name() const override { return "uniform"; }

 private:
  space::SearchSpace sp_;
};

class FairArchSampler final : public ArchSampler {
 public:
  FairArchSampler(const space::SearchSpace& sp, int cap)
      : sp_(sp), state_(sp), cap_(cap) {}
  space::Architecture next(Rng& rng) override {
    if (queue_.empty()) {
      auto round = state_.sample_round(sp_, rng, cap_);
      queue_.assign(round.begin(), round.end());
    }
    space::Architecture a = std::move(queue_.front());
    queue_.pop_front();
    return a;
  }
  std::string name() const override { return "fair"; }

 private:
  space::SearchSpace sp_;
  space::FairSamplerState state_;
  int cap_;
  std::deque<space::Architecture> queue_;
};

}  // namespace

std::unique_ptr<ArchSampler> make_sampler(const std::string& kind,
                                          const space::SearchSpace& sp,
                                          int fair_round_cap) {
  if (kind == "uniform") return std::make_unique<UniformArchSampler>(sp);
  if (kind == "fair") return std::make_unique<FairArchSampler>(sp, fair_round_cap);
  raise(ErrorCode::Config, "unknown sampler '" + kind + "'");
}

SgdMomentum::SgdMomentum(std::vector<TensorF> params, double momentum)
    : params_(std::move(params)), momentum_(momentum) {
  buffers_.reserve(params_.size());
  for (std::size_t i = 0; i < params_.size(); ++i) {
    buffers_.emplace_back(params_[i].values().size(), 0.0f);
    index_.emplace(params_[i].impl(), i);
  }
}

void SgdMomentum::zero_grads() {
  for (auto& p : params_) {
    p.ensure_grad();
    p.zero_grad();
  }
}

std::ptrdiff_t SgdMomentum::index_of(const TensorData<float>* t) const {
  const auto it = index_.find(t);
  return it == index_.end() ? -1 : static_cast<std::ptrdiff_t>(it->second);
}

void SgdMomentum::step(const std::vector<char>& touched,
                       const std::vector<double>& eff_lr) {
  check(touched.size() == params_.size() && eff_lr.size() == params_.size(),
        ErrorCode::Usage, "optimizer step vectors must cover every parameter");
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (!touched[i]) continue;
    auto& w = params_[i].values();
    auto& g = params_[i].grad();
    auto& v = buffers_[i];
    const float m = static_cast<float>(momentum_);
    const float lr = static_cast<float>(eff_lr[i]);
    for (std::size_t j = 0; j < w.size(); ++j) {
      v[j] = m * v[j] + g[j];
      w[j] -= lr * v[j];
    }
  }
  ++step_count_;
}

double run_training_pass(net::SuperNet& net, const std::string& kind,
                         const space::Architecture& arch, const TensorF& images,
                         const std::vector<int>& labels,
                         const TensorF* teacher_logits, const TrainConfig& cfg,
                         std::uint64_t dropout_seed, SgdMomentum& opt,
                         std::vector<char>& touched, TensorF* teacher_out) {
  const bool is_largest = kind == "largest";
  Tape<float> tape;
  TensorF loss;
  TensorF logits;
  {
    TapeScope<float> scope(tape);
    Rng dropout_rng(dropout_seed);
    logits = net::forward(net, arch, images, BnMode::Train,
                          /*dropout_active=*/is_largest, &dropout_rng);
    loss = is_largest ? cross_entropy(logits, labels)
                      : kl_distill(logits, *teacher_logits);
  }
  tape.backward(loss);

  for (const auto& leaf : tape.touched_leaves()) {
    const std::ptrdiff_t idx = opt.index_of(leaf.get());
    if (idx < 0) continue;
    touched[static_cast<std::size_t>(idx)] = 1;
    if (is_largest && cfg.weight_decay > 0.0) {
      auto& g = leaf->grad;
      const auto& w = leaf->values;
      const float wd = static_cast<float>(cfg.weight_decay);
      for (std::size_t j = 0; j < w.size(); ++j) g[j] += wd * w[j];
    }
  }
  if (is_largest && teacher_out != nullptr) *teacher_out = logits.detach();
  return static_cast<double>(loss.item());
}

std::vector<double> param_multipliers(net::SuperNet& net,
                                      const split::LRPlan& lr_plan) {
  std::vector<double> out;
  const int head_stage = static_cast<int>(net.stages.size());
  for (const auto& p : net.parameters()) {
    if (p.stage < 0)
      out.push_back(1.0);  // stem
    else if (p.stage == head_stage)
      out.push_back(lr_plan.head(p.group));
    else
      out.push_back(lr_plan.group(p.stage, p.group));
  }
  return out;
}

StepReport train_step(net::SuperNet& net, const TensorF& images,
                      const std::vector<int>& labels, const TrainConfig& cfg,
                      ArchSampler& sampler, Rng& sampler_rng, SgdMomentum& opt,
                      const std::vector<double>& param_mult, long step,
                      long total_steps, long warmup_steps) {
  check(images.dim(0) >= 1, ErrorCode::Usage, "train_step on an empty batch");
  StepReport report;
  report.step_index = step;
  report.lr_base = lr_at(step, total_steps, warmup_steps, cfg.base_lr);
  report.dropout_seed = Rng(cfg.seed).split("dropout").split(
      static_cast<std::uint64_t>(step)).state();

  opt.zero_grads();
  std::vector<char> touched(opt.size(), 0);

  TensorF teacher;
  const auto largest = space::largest_arch(net.space);
  {
    PassRecord rec{"largest", largest, 0.0, true, cfg.weight_decay > 0.0};
    rec.loss = run_training_pass(net, "largest", largest, images, labels,
                                 nullptr, cfg, report.dropout_seed, opt,
                                 touched, &teacher);
    report.passes.push_back(std::move(rec));
  }
  for (int k = 0; k < cfg.num_random_subnets; ++k) {
    const auto arch = sampler.next(sampler_rng);
    PassRecord rec{"random", arch, 0.0, false, false};
    rec.loss = run_training_pass(net, "random", arch, images, labels, &teacher,
                                 cfg, 0, opt, touched, nullptr);
    report.passes.push_back(std::move(rec));
  }
  {
    const auto smallest = space::smallest_arch(net.space);
    PassRecord rec{"smallest", smallest, 0.0, false, false};
    rec.loss = run_training_pass(net, "smallest", smallest, images, labels,
                                 &teacher, cfg, 0, opt, touched, nullptr);
    report.passes.push_back(std::move(rec));
  }

  std::vector<double> eff_lr(opt.size());
  for (std::size_t i = 0; i < eff_lr.size(); ++i)
    eff_lr[i] = report.lr_base * param_mult[i];
  opt.step(touched, eff_lr);
  return report;
}

namespace {

void append_metrics_row(const std::string& path, const EpochStats& st) {
  const bool fresh = !std::filesystem::exists(path);
  std::ofstream out(path, std::ios::app);
  check(out.good(), ErrorCode::Io, "cannot append to " + path);
  if (fresh) out << "epoch,step,lr,loss_ce,loss_kl_mean,kendall_proxy\n";
  out << st.epoch << "," << st.step << "," << st.lr << "," << st.loss_ce << ","
      << st.loss_kl_mean << ",";
  if (std::isnan(st.kendall_proxy))
    out << "nan";
  else
    out << st.kendall_proxy;
  out << "\n";
}

std::string epoch_prefix(const std::string& dir, int epoch) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "epoch_%03d", epoch);
  return dir + "/" + buf;
}

}  // namespace

std::vector<EpochStats> train_loop(net::SuperNet& net, const data::Dataset& ds,
                                   const TrainConfig& cfg,
                                   const data::AugmentConfig& aug,
                                   const split::LRPlan& lr_plan,
                                   bool use_warmup, const EpochHooks& hooks) {
  cfg.validate();
  net.dropout_p = static_cast<float>(cfg.dropout_p);
  const auto train_idx = ds.indices_of(data::Split::Train);
  check(!train_idx.empty(), ErrorCode::Config, "dataset has no train split");

  const long steps_per_epoch =
      static_cast<long>(train_idx.size()) / cfg.batch_size;
  check(steps_per_epoch >= 1, ErrorCode::Config,
        "batch_size larger than the train split");
  const long total_steps = steps_per_epoch * cfg.epochs;
  const long warmup_steps =
      use_warmup ? steps_per_epoch * cfg.warmup_epochs : 0;

  std::vector<TensorF> params;
  for (auto& p : net.parameters()) params.push_back(p.tensor);
  SgdMomentum opt(std::move(params), cfg.momentum);
  const auto mult = param_multipliers(net, lr_plan);
  auto sampler = make_sampler(cfg.sampler, net.space);

  Rng root(cfg.seed);
  Rng sampler_rng = root.split("sampler");

  if (!hooks.checkpoint_dir.empty())
    std::filesystem::create_directories(hooks.checkpoint_dir);

  std::vector<EpochStats> out;
  long step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng shuffle_rng = root.split("shuffle").split(static_cast<std::uint64_t>(epoch));
    const auto schedule =
        data::batch_schedule(train_idx, cfg.batch_size, true, shuffle_rng);
    double ce_sum = 0.0, kl_sum = 0.0;
    long kl_count = 0;
    double last_lr = 0.0;
    for (std::size_t b = 0; b < schedule.size(); ++b) {
      TensorF images;
      std::vector<int> labels;
      data::gather_batch(ds, schedule[b], images, labels);
      if (aug.enabled) {
        Rng aug_rng = root.split("augment")
                          .split(static_cast<std::uint64_t>(epoch))
                          .split(static_cast<std::uint64_t>(b));
        images = data::augment(images, aug, aug_rng);
      }
      const auto report = train_step(net, images, labels, cfg, *sampler,
                                     sampler_rng, opt, mult, step, total_steps,
                                     warmup_steps);
      last_lr = report.lr_base;
      ce_sum += report.passes.front().loss;
      for (std::size_t p = 1; p < report.passes.size(); ++p) {
        kl_sum += report.passes[p].loss;
        ++kl_count;
      }
      ++step;
    }

    EpochStats st;
    st.epoch = epoch;
    st.step = step;
    st.lr = last_lr;
    st.loss_ce = ce_sum / static_cast<double>(schedule.size());
    st.loss_kl_mean = kl_count ? kl_sum / static_cast<double>(kl_count) : 0.0;
    if (!hooks.checkpoint_dir.empty())
      net::save_checkpoint(epoch_prefix(hooks.checkpoint_dir, epoch), net);
    if (hooks.on_epoch) {
      auto snapshot = net.clone();  // hooks must not perturb training
      st.kendall_proxy = hooks.on_epoch(snapshot, epoch);
    }
    if (!hooks.metrics_csv.empty()) append_metrics_row(hooks.metrics_csv, st);
    out.push_back(st);
  }
  return out;
}

std::vector<EpochStats> train_one_shot(net::SuperNet& net,
                                       const data::Dataset& ds,
                                       const TrainConfig& cfg,
                                       const data::AugmentConfig& aug,
                                       const EpochHooks& hooks) {
  check(net.plan.num_groups == 1, ErrorCode::Config,
        "one-shot training expects the one-group plan");
  split::LRPlan flat = split::lr_multipliers(net.plan, split::LrRule::InverseProb,
                                             net.space);
  return train_loop(net, ds, cfg, aug, flat, /*use_warmup=*/true, hooks);
}

std::vector<EpochStats> train_few_shot_stage(net::SuperNet& net,
                                             const data::Dataset& ds,
                                             const TrainConfig& cfg,
                                             const data::AugmentConfig& aug,
                                             const split::LRPlan& lr_plan,
                                             const EpochHooks& hooks) {
  return train_loop(net, ds, cfg, aug, lr_plan, /*use_warmup=*/false, hooks);
}

void train_subnetwork(net::SubNetwork& net, const data::Dataset& ds,
                      const TrainConfig& cfg, const data::AugmentConfig& aug) {
  cfg.validate();
  const auto train_idx = ds.indices_of(data::Split::Train);
  check(!train_idx.empty(), ErrorCode::Config, "dataset has no train split");
  const long steps_per_epoch =
      static_cast<long>(train_idx.size()) / cfg.batch_size;
  check(steps_per_epoch >= 1, ErrorCode::Config,
        "batch_size larger than the train split");
  const long total_steps = steps_per_epoch * cfg.epochs;
  const long warmup_steps = steps_per_epoch * cfg.warmup_epochs;

  SgdMomentum opt(net.parameters(), cfg.momentum);
  Rng root(cfg.seed);
  long step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng shuffle_rng = root.split("shuffle").split(static_cast<std::uint64_t>(epoch));
    const auto schedule =
        data::batch_schedule(train_idx, cfg.batch_size, true, shuffle_rng);
    for (std::size_t b = 0; b < schedule.size(); ++b) {
      TensorF images;
      std::vector<int> labels;
      data::gather_batch(ds, schedule[b], images, labels);
      if (aug.enabled) {
        Rng aug_rng = root.split("augment")
                          .split(static_cast<std::uint64_t>(epoch))
                          .split(static_cast<std::uint64_t>(b));
        images = data::augment(images, aug, aug_rng);
      }
      opt.zero_grads();
      Tape<float> tape;
      TensorF loss;
      {
        TapeScope<float> scope(tape);
        Rng dropout_rng = root.split("dropout").split(static_cast<std::uint64_t>(step));
        TensorF logits =
            net::forward(net, images, BnMode::Train, cfg.dropout_p > 0.0,
                         static_cast<float>(cfg.dropout_p), &dropout_rng);
        loss = cross_entropy(logits, labels);
      }
      tape.backward(loss);
      std::vector<char> touched(opt.size(), 0);
      for (const auto& leaf : tape.touched_leaves()) {
        const std::ptrdiff_t idx = opt.index_of(leaf.get());
        if (idx < 0) continue;
        touched[static_cast<std::size_t>(idx)] = 1;
        if (cfg.weight_decay > 0.0) {
          auto& g = leaf->grad;
          const auto& w = leaf->values;
          const float wd = static_cast<float>(cfg.weight_decay);
          for (std::size_t j = 0; j < w.size(); ++j) g[j] += wd * w[j];
        }
      }
      const double lr = lr_at(step, total_steps, warmup_steps, cfg.base_lr);
      std::vector<double> eff_lr(opt.size(), lr);
      opt.step(touched, eff_lr);
      ++step;
    }
  }
}

namespace {

Json stage_marker_to_json(const StageOutcome& o) {
  Json rows = Json::array();
  for (const auto& st : o.stats)
    rows.push_back({{"epoch", st.epoch},
                    {"step", st.step},
                    {"lr", st.lr},
                    {"loss_ce", st.loss_ce},
                    {"loss_kl_mean", st.loss_kl_mean},
                    {"kendall_proxy", std::isnan(st.kendall_proxy)
                                          ? Json(nullptr)
                                          : Json(st.kendall_proxy)}});
  return Json{{"groups", o.groups},
              {"selected_epoch", o.selected_epoch},
              {"selected_proxy", std::isnan(o.selected_proxy)
                                     ? Json(nullptr)
                                     : Json(o.selected_proxy)},
              {"selected_prefix", o.selected_prefix},
              {"epochs", rows}};
}

StageOutcome stage_marker_from_json(const Json& j, const std::string& dir) {
  StageOutcome o;
  o.groups = j.at("groups").get<int>();
  o.dir = dir;
  o.selected_epoch = j.at("selected_epoch").get<int>();
  o.selected_proxy = j.at("selected_proxy").is_null()
                         ? std::numeric_limits<double>::quiet_NaN()
                         : j.at("selected_proxy").get<double>();
  o.selected_prefix = j.at("selected_prefix").get<std::string>();
  for (const auto& row : j.at("epochs")) {
    EpochStats st;
    st.epoch = row.at("epoch").get<int>();
    st.step = row.at("step").get<long>();
    st.lr = row.at("lr").get<double>();
    st.loss_ce = row.at("loss_ce").get<double>();
    st.loss_kl_mean = row.at("loss_kl_mean").get<double>();
    st.kendall_proxy = row.at("kendall_proxy").is_null()
                           ? std::numeric_limits<double>::quiet_NaN()
                           : row.at("kendall_proxy").get<double>();
    o.stats.push_back(st);
  }
  o.resumed = true;
  return o;
}

int default_select(const std::vector<EpochStats>& stats) {
  int best = static_cast<int>(stats.size()) - 1;
  double best_tau = -2.0;
  for (std::size_t i = 0; i < stats.size(); ++i) {
    if (std::isnan(stats[i].kendall_proxy)) continue;
    if (stats[i].kendall_proxy >= best_tau) {
      best_tau = stats[i].kendall_proxy;
      best = static_cast<int>(i);
    }
  }
  return best;
}

}  // namespace

std::vector<StageOutcome> progressive_run(
    const space::SearchSpace& sp, const data::Dataset& ds,
    const ProgressiveConfig& cfg, const std::string& out_dir,
    const std::function<EpochHooks(int g, const std::string& stage_dir)>&
        stage_hooks,
    const std::function<int(const std::vector<EpochStats>&)>& select_epoch,
    const std::function<void(net::SuperNet& pre, net::SuperNet& post, int g)>&
        after_split) {
  cfg.one_shot.validate();
  cfg.few_shot.validate();
  check(cfg.few_shot.warmup_epochs == 0, ErrorCode::Config,
        "few-shot stages train without warmup");
  const int g_max =
      cfg.schedule_max > 0 ? cfg.schedule_max : split::max_groups(sp);
  check(g_max >= 1 && g_max <= split::max_groups(sp), ErrorCode::Config,
        "schedule exceeds the maximum group count");
  std::filesystem::create_directories(out_dir);

  auto select = [&](const std::vector<EpochStats>& stats) {
    return select_epoch ? select_epoch(stats) : default_select(stats);
  };

  std::vector<StageOutcome> outcomes;
  net::SuperNet current;
  for (int g = 1; g <= g_max; ++g) {
    const std::string dir = out_dir + "/stage_g" + std::to_string(g);
    const std::string marker = dir + "/stage_complete.json";
    std::filesystem::create_directories(dir);

    if (std::filesystem::exists(marker)) {
      StageOutcome o = stage_marker_from_json(read_json_file(marker), dir);
      current = net::load_checkpoint(o.selected_prefix);
      outcomes.push_back(std::move(o));
      continue;
    }

    if (g == 1) {
      current = net::build_supernet(sp, split::initial_plan(sp), cfg.build_seed);
    } else {
      const auto new_plan = split::next_split(current.plan, sp);
      auto next = net::build_supernet(sp, new_plan, cfg.build_seed + g);
      const auto map = split::inheritance_map(current.plan, new_plan, sp);
      net::apply_inheritance(next, current, map);
      net::save_checkpoint(dir + "/initial", next);
      write_json_file(dir + "/inheritance_map.json",
                      split::inheritance_to_json(map));
      if (after_split) after_split(current, next, g);
      current = std::move(next);
    }

    StageOutcome o;
    o.groups = g;
    o.dir = dir;
    EpochHooks hooks = stage_hooks ? stage_hooks(g, dir) : EpochHooks{};
    if (hooks.checkpoint_dir.empty()) hooks.checkpoint_dir = dir;
    if (hooks.metrics_csv.empty()) hooks.metrics_csv = dir + "/metrics.csv";

    if (g == 1) {
      o.stats = train_one_shot(current, ds, cfg.one_shot, cfg.augment, hooks);
    } else {
      const auto lr_plan =
          split::lr_multipliers(current.plan, cfg.lr_rule, sp,
                                split::table2_preset(), cfg.lr_beta, cfg.lr_cap,
                                cfg.lr_strict);
      write_json_file(dir + "/lr_plan.json",
                      Json{{"stage_group_mult", lr_plan.stage_group_mult},
                           {"head_mult", lr_plan.head_mult}});
      o.stats =
          train_few_shot_stage(current, ds, cfg.few_shot, cfg.augment, lr_plan, hooks);
    }

    o.selected_epoch = select(o.stats);
    check(o.selected_epoch >= 0 &&
              o.selected_epoch < static_cast<int>(o.stats.size()),
          ErrorCode::Usage, "selected epoch out of range");
    o.selected_proxy =
        o.stats[static_cast<std::size_t>(o.selected_epoch)].kendall_proxy;
    o.selected_prefix = epoch_prefix(hooks.checkpoint_dir, o.selected_epoch);
    write_json_file(marker, stage_marker_to_json(o));

    // next stage inherits from the selected checkpoint
    current = net::load_checkpoint(o.selected_prefix);
    outcomes.push_back(std::move(o));
  }
  return outcomes;
}

}  // namespace fsnas::train
