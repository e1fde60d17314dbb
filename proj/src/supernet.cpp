#include "fsnas/supernet.hpp"

#include <algorithm>
#include <cstring>
#include <map>

#include "fsnas/error.hpp"

namespace fsnas::net {

namespace {

std::string stage_prefix(int s, int g, int b) {
  return "stage" + std::to_string(s) + ".group" + std::to_string(g) +
         ".block" + std::to_string(b) + ".";
}

struct LayerDims {
  int in_cap, mid_cap, out_cap, stride;
};

LayerDims block_dims(const space::SearchSpace& sp,
                     const split::GroupPlan& plan, int s, int g, int b) {
  const auto cands = space::candidate_channels(sp.stages[static_cast<std::size_t>(s)]);
  const int mid_cap = cands.back();
  const int stage_in =
      s == 0 ? sp.stem_channels
             : space::candidate_channels(sp.stages[static_cast<std::size_t>(s - 1)]).back();
  const int out_cap = plan.group_candidates(s, g).back();
  return LayerDims{b == 0 ? stage_in : out_cap, mid_cap, out_cap,
                   b == 0 ? sp.stages[static_cast<std::size_t>(s)].stride : 1};
}

void emit_bn_schema(std::vector<TensorSchema>& out, const std::string& prefix,
                    int cap) {
  out.push_back({prefix + "gamma", {cap}});
  out.push_back({prefix + "beta", {cap}});
  out.push_back({prefix + "running_mean", {cap}});
  out.push_back({prefix + "running_var", {cap}});
}

}  // namespace

std::vector<TensorSchema> tensor_schema(const space::SearchSpace& sp,
                                        const split::GroupPlan& plan) {
  plan.validate(sp);
  std::vector<TensorSchema> out;
  out.push_back({"stem.conv.weight", {sp.stem_channels, 3, 3, 3}});
  emit_bn_schema(out, "stem.bn.", sp.stem_channels);
  for (std::size_t s = 0; s < sp.stages.size(); ++s) {
    const int max_depth = sp.stages[s].depth_choices.back();
    for (int g = 0; g < plan.group_count(static_cast<int>(s)); ++g) {
      for (int b = 0; b < max_depth; ++b) {
        const auto d = block_dims(sp, plan, static_cast<int>(s), g, b);
        const std::string p = stage_prefix(static_cast<int>(s), g, b);
        out.push_back({p + "conv1.weight", {d.mid_cap, d.in_cap, 3, 3}});
        emit_bn_schema(out, p + "bn1.", d.mid_cap);
        out.push_back({p + "conv2.weight", {d.out_cap, d.mid_cap, 3, 3}});
        emit_bn_schema(out, p + "bn2.", d.out_cap);
        if (b == 0) {
          out.push_back({p + "proj.weight", {d.out_cap, d.in_cap, 1, 1}});
          emit_bn_schema(out, p + "bnp.", d.out_cap);
        }
      }
    }
  }
  const int last = static_cast<int>(sp.stages.size()) - 1;
  for (int g = 0; g < plan.group_count(last); ++g) {
    const int in_cap = plan.group_candidates(last, g).back();
    const std::string p = "head.group" + std::to_string(g) + ".";
    out.push_back({p + "weight", {sp.num_classes, in_cap}});
    out.push_back({p + "bias", {sp.num_classes}});
  }
  return out;
}

namespace {

BnUnit make_bn(int cap) {
  BnUnit bn;
  bn.gamma = TensorF({cap}, std::vector<float>(static_cast<std::size_t>(cap), 1.0f));
  bn.beta = TensorF({cap});
  bn.stats = BnStats<float>(cap);
  bn.gamma.set_requires_grad(true);
  bn.beta.set_requires_grad(true);
  return bn;
}

ConvUnit make_conv(int out_cap, int in_cap, int k, int stride, int padding,
                   Rng& rng) {
  ConvUnit c;
  c.weight = TensorF({out_cap, in_cap, k, k});
  he_normal_init(c.weight, rng);
  c.weight.set_requires_grad(true);
  c.k = k;
  c.stride = stride;
  c.padding = padding;
  return c;
}

void visit_bn(const std::string& prefix, BnUnit& bn,
              const std::function<void(const TensorView&)>& fn) {
  fn({prefix + "gamma", bn.gamma.shape(), bn.gamma.data()});
  fn({prefix + "beta", bn.beta.shape(), bn.beta.data()});
  const int cap = bn.stats.capacity();
  fn({prefix + "running_mean", {cap}, bn.stats.running_mean.data()});
  fn({prefix + "running_var", {cap}, bn.stats.running_var.data()});
}

}  // namespace

void visit_tensors(SuperNet& net,
                   const std::function<void(const TensorView&)>& fn) {
  fn({"stem.conv.weight", net.stem.weight.shape(), net.stem.weight.data()});
  visit_bn("stem.bn.", net.stem_bn, fn);
  for (std::size_t s = 0; s < net.stages.size(); ++s) {
    auto& stage = net.stages[s];
    for (std::size_t g = 0; g < stage.groups.size(); ++g) {
      auto& group = stage.groups[g];
      for (std::size_t b = 0; b < group.blocks.size(); ++b) {
        auto& blk = group.blocks[b];
        const std::string p =
            stage_prefix(static_cast<int>(s), static_cast<int>(g), static_cast<int>(b));
        fn({p + "conv1.weight", blk.conv1.weight.shape(), blk.conv1.weight.data()});
        visit_bn(p + "bn1.", blk.bn1, fn);
        fn({p + "conv2.weight", blk.conv2.weight.shape(), blk.conv2.weight.data()});
        visit_bn(p + "bn2.", blk.bn2, fn);
        if (blk.has_proj) {
          fn({p + "proj.weight", blk.proj.weight.shape(), blk.proj.weight.data()});
          visit_bn(p + "bnp.", blk.bnp, fn);
        }
      }
    }
  }
  for (std::size_t g = 0; g < net.heads.size(); ++g) {
    const std::string p = "head.group" + std::to_string(g) + ".";
    fn({p + "weight", net.heads[g].weight.shape(), net.heads[g].weight.data()});
    fn({p + "bias", net.heads[g].bias.shape(), net.heads[g].bias.data()});
  }
}

SuperNet build_supernet(const space::SearchSpace& sp,
                        const split::GroupPlan& plan, std::uint64_t seed) {
  sp.validate();
  plan.validate(sp);
  SuperNet net;
  net.space = sp;
  net.plan = plan;
  Rng rng = Rng(seed).split("supernet-init");

  net.stem = make_conv(sp.stem_channels, 3, 3, sp.stem_stride, 1, rng);
  net.stem_bn = make_bn(sp.stem_channels);

  for (std::size_t s = 0; s < sp.stages.size(); ++s) {
    Stage stage;
    stage.out_candidates = space::candidate_channels(sp.stages[s]);
    stage.mid_cap = stage.out_candidates.back();
    stage.in_cap =
        s == 0 ? sp.stem_channels
               : space::candidate_channels(sp.stages[s - 1]).back();
    stage.stride = sp.stages[s].stride;
    stage.max_depth = sp.stages[s].depth_choices.back();
    for (int g = 0; g < plan.group_count(static_cast<int>(s)); ++g) {
      Group group;
      group.candidates = plan.group_candidates(static_cast<int>(s), g);
      group.out_cap = group.candidates.back();
      for (int b = 0; b < stage.max_depth; ++b) {
        const auto d = block_dims(sp, plan, static_cast<int>(s), g, b);
        Block blk;
        blk.conv1 = make_conv(d.mid_cap, d.in_cap, 3, d.stride, 1, rng);
        blk.bn1 = make_bn(d.mid_cap);
        blk.conv2 = make_conv(d.out_cap, d.mid_cap, 3, 1, 1, rng);
        blk.bn2 = make_bn(d.out_cap);
        if (b == 0) {
          blk.has_proj = true;
          blk.proj = make_conv(d.out_cap, d.in_cap, 1, d.stride, 0, rng);
          blk.bnp = make_bn(d.out_cap);
        }
        group.blocks.push_back(std::move(blk));
      }
      stage.groups.push_back(std::move(group));
    }
    net.stages.push_back(std::move(stage));
  }

  const int last = static_cast<int>(sp.stages.size()) - 1;
  for (int g = 0; g < plan.group_count(last); ++g) {
    Head head;
    const int in_cap = plan.group_candidates(last, g).back();
    head.weight = TensorF({sp.num_classes, in_cap});
    he_normal_init(head.weight, rng);
    head.bias = TensorF({sp.num_classes});
    head.weight.set_requires_grad(true);
    head.bias.set_requires_grad(true);
    net.heads.push_back(std::move(head));
  }
  return net;
}

std::vector<SuperNet::ParamRef> SuperNet::parameters() {
  std::vector<ParamRef> out;
  out.push_back({"stem.conv.weight", stem.weight, -1, -1});
  out.push_back({"stem.bn.gamma", stem_bn.gamma, -1, -1});
  out.push_back({"stem.bn.beta", stem_bn.beta, -1, -1});
  for (std::size_t s = 0; s < stages.size(); ++s) {
    for (std::size_t g = 0; g < stages[s].groups.size(); ++g) {
      auto& group = stages[s].groups[g];
      for (std::size_t b = 0; b < group.blocks.size(); ++b) {
        auto& blk = group.blocks[b];
        const std::string p =
            stage_prefix(static_cast<int>(s), static_cast<int>(g), static_cast<int>(b));
        const int si = static_cast<int>(s), gi = static_cast<int>(g);
        out.push_back({p + "conv1.weight", blk.conv1.weight, si, gi});
        out.push_back({p + "bn1.gamma", blk.bn1.gamma, si, gi});
        out.push_back({p + "bn1.beta", blk.bn1.beta, si, gi});
        out.push_back({p + "conv2.weight", blk.conv2.weight, si, gi});
        out.push_back({p + "bn2.gamma", blk.bn2.gamma, si, gi});
        out.push_back({p + "bn2.beta", blk.bn2.beta, si, gi});
        if (blk.has_proj) {
          out.push_back({p + "proj.weight", blk.proj.weight, si, gi});
          out.push_back({p + "bnp.gamma", blk.bnp.gamma, si, gi});
          out.push_back({p + "bnp.beta", blk.bnp.beta, si, gi});
        }
      }
    }
  }
  const int head_stage = static_cast<int>(stages.size());
  for (std::size_t g = 0; g < heads.size(); ++g) {
    const std::string p = "head.group" + std::to_string(g) + ".";
    out.push_back({p + "weight", heads[g].weight, head_stage, static_cast<int>(g)});
    out.push_back({p + "bias", heads[g].bias, head_stage, static_cast<int>(g)});
  }
  return out;
}

namespace {

ConvUnit clone_conv(const ConvUnit& c) {
  ConvUnit out = c;
  out.weight = c.weight.clone();
  out.weight.set_requires_grad(true);
  return out;
}

BnUnit clone_bn(const BnUnit& b) {
  BnUnit out = b;
  out.gamma = b.gamma.clone();
  out.beta = b.beta.clone();
  out.gamma.set_requires_grad(true);
  out.beta.set_requires_grad(true);
  return out;
}

}  // namespace

SuperNet SuperNet::clone() const {
  SuperNet out = *this;
  out.stem = clone_conv(stem);
  out.stem_bn = clone_bn(stem_bn);
  for (auto& stage : out.stages)
    for (auto& group : stage.groups)
      for (auto& blk : group.blocks) {
        blk.conv1 = clone_conv(blk.conv1);
        blk.bn1 = clone_bn(blk.bn1);
        blk.conv2 = clone_conv(blk.conv2);
        blk.bn2 = clone_bn(blk.bn2);
        if (blk.has_proj) {
          blk.proj = clone_conv(blk.proj);
          blk.bnp = clone_bn(blk.bnp);
        }
      }
  for (auto& head : out.heads) {
    head.weight = head.weight.clone();
    head.bias = head.bias.clone();
    head.weight.set_requires_grad(true);
    head.bias.set_requires_grad(true);
  }
  return out;
}

std::vector<int> route(const SuperNet& net, const space::Architecture& arch) {
  space::validate_arch(net.space, arch);
  std::vector<int> out;
  for (std::size_t s = 0; s < net.stages.size(); ++s) {
    const int value = net.stages[s]
                          .out_candidates[static_cast<std::size_t>(arch.stages[s].out_idx)];
    out.push_back(net.plan.group_of(static_cast<int>(s), value));
  }
  return out;
}

namespace {

TensorF block_forward(Block& blk, const TensorF& x, int in_c, int mid_c,
                      int out_c, BnMode mode) {
  TensorF h = conv2d(x, prefix_slice4(blk.conv1.weight, mid_c, in_c),
                     blk.conv1.stride, blk.conv1.padding);
  h = batch_norm2d(h, prefix_slice1(blk.bn1.gamma, mid_c),
                   prefix_slice1(blk.bn1.beta, mid_c), blk.bn1.stats, mode);
  h = relu(h);
  h = conv2d(h, prefix_slice4(blk.conv2.weight, out_c, mid_c),
             blk.conv2.stride, blk.conv2.padding);
  h = batch_norm2d(h, prefix_slice1(blk.bn2.gamma, out_c),
                   prefix_slice1(blk.bn2.beta, out_c), blk.bn2.stats, mode);
  TensorF sc = x;
  if (blk.has_proj) {
    sc = conv2d(x, prefix_slice4(blk.proj.weight, out_c, in_c),
                blk.proj.stride, blk.proj.padding);
    sc = batch_norm2d(sc, prefix_slice1(blk.bnp.gamma, out_c),
                      prefix_slice1(blk.bnp.beta, out_c), blk.bnp.stats, mode);
  }
  return relu(add(h, sc));
}

}  // namespace

TensorF forward(SuperNet& net, const space::Architecture& arch,
                const TensorF& batch, BnMode mode, bool dropout_active,
                Rng* dropout_rng) {
  check(batch.ndim() == 4 && batch.dim(1) == 3, ErrorCode::Dimension,
        "super-net input must be [N,3,H,W]");
  const auto groups = route(net, arch);

  TensorF x = conv2d(batch, net.stem.weight, net.stem.stride, net.stem.padding);
  x = batch_norm2d(x, net.stem_bn.gamma, net.stem_bn.beta, net.stem_bn.stats, mode);
  x = relu(x);

  int in_c = net.space.stem_channels;
  for (std::size_t s = 0; s < net.stages.size(); ++s) {
    auto& stage = net.stages[s];
    auto& group = stage.groups[static_cast<std::size_t>(groups[s])];
    const auto& choice = arch.stages[s];
    const int out_c = stage.out_candidates[static_cast<std::size_t>(choice.out_idx)];
    for (int b = 0; b < choice.depth; ++b) {
      const int mid_c =
          stage.out_candidates[static_cast<std::size_t>(choice.mid_idx[static_cast<std::size_t>(b)])];
      x = block_forward(group.blocks[static_cast<std::size_t>(b)], x, in_c,
                        mid_c, out_c, mode);
      in_c = out_c;
    }
  }

  TensorF feat = global_avg_pool(x);
  if (dropout_active && net.dropout_p > 0.0f) {
    check(dropout_rng != nullptr, ErrorCode::Usage,
          "dropout_active requires an rng");
    feat = dropout(feat, net.dropout_p, true, *dropout_rng);
  }
  auto& head = net.heads[static_cast<std::size_t>(groups.back())];
  return linear(feat, prefix_slice_cols(head.weight, in_c), head.bias);
}

std::vector<TensorF> SubNetwork::parameters() {
  std::vector<TensorF> out;
  out.push_back(stem.weight);
  out.push_back(stem_bn.gamma);
  out.push_back(stem_bn.beta);
  for (auto& blocks : stage_blocks)
    for (auto& blk : blocks) {
      out.push_back(blk.conv1.weight);
      out.push_back(blk.bn1.gamma);
      out.push_back(blk.bn1.beta);
      out.push_back(blk.conv2.weight);
      out.push_back(blk.bn2.gamma);
      out.push_back(blk.bn2.beta);
      if (blk.has_proj) {
        out.push_back(blk.proj.weight);
        out.push_back(blk.bnp.gamma);
        out.push_back(blk.bnp.beta);
      }
    }
  out.push_back(head.weight);
  out.push_back(head.bias);
  return out;
}

TensorF forward(SubNetwork& net, const TensorF& batch, BnMode mode,
                bool dropout_active, float dropout_p, Rng* dropout_rng) {
  TensorF x = conv2d(batch, net.stem.weight, net.stem.stride, net.stem.padding);
  x = batch_norm2d(x, net.stem_bn.gamma, net.stem_bn.beta, net.stem_bn.stats, mode);
  x = relu(x);
  for (auto& blocks : net.stage_blocks)
    for (auto& blk : blocks) {
      const int in_c = x.dim(1);
      const int mid_c = blk.conv1.weight.dim(0);
      const int out_c = blk.conv2.weight.dim(0);
      x = block_forward(blk, x, in_c, mid_c, out_c, mode);
    }
  TensorF feat = global_avg_pool(x);
  if (dropout_active && dropout_p > 0.0f) {
    check(dropout_rng != nullptr, ErrorCode::Usage,
          "dropout_active requires an rng");
    feat = dropout(feat, dropout_p, true, *dropout_rng);
  }
  return linear(feat, net.head.weight, net.head.bias);
}

SubNetwork build_subnetwork(const space::SearchSpace& sp,
                            const space::Architecture& arch,
                            std::uint64_t seed) {
  space::validate_arch(sp, arch);
  SubNetwork net;
  net.space = sp;
  net.arch = arch;
  Rng rng = Rng(seed).split("subnet-init");
  net.stem = make_conv(sp.stem_channels, 3, 3, sp.stem_stride, 1, rng);
  net.stem_bn = make_bn(sp.stem_channels);
  int in_c = sp.stem_channels;
  for (std::size_t s = 0; s < sp.stages.size(); ++s) {
    const auto cands = space::candidate_channels(sp.stages[s]);
    const auto& choice = arch.stages[s];
    const int out_c = cands[static_cast<std::size_t>(choice.out_idx)];
    std::vector<Block> blocks;
    for (int b = 0; b < choice.depth; ++b) {
      const int mid_c =
          cands[static_cast<std::size_t>(choice.mid_idx[static_cast<std::size_t>(b)])];
      const int stride = b == 0 ? sp.stages[s].stride : 1;
      Block blk;
      blk.conv1 = make_conv(mid_c, in_c, 3, stride, 1, rng);
      blk.bn1 = make_bn(mid_c);
      blk.conv2 = make_conv(out_c, mid_c, 3, 1, 1, rng);
      blk.bn2 = make_bn(out_c);
      if (b == 0) {
        blk.has_proj = true;
        blk.proj = make_conv(out_c, in_c, 1, stride, 0, rng);
        blk.bnp = make_bn(out_c);
      }
      blocks.push_back(std::move(blk));
      in_c = out_c;
    }
    net.stage_blocks.push_back(std::move(blocks));
  }
  net.head.weight = TensorF({sp.num_classes, in_c});
  he_normal_init(net.head.weight, rng);
  net.head.bias = TensorF({sp.num_classes});
  net.head.weight.set_requires_grad(true);
  net.head.bias.set_requires_grad(true);
  return net;
}

namespace {

TensorF copy_slice4(const TensorF& w, int a, int b) {
  TensorF s = prefix_slice4(w, a, b);
  return s.same_storage(w) ? w.clone() : s;
}

TensorF copy_slice1(const TensorF& v, int c) {
  TensorF s = prefix_slice1(v, c);
  return s.same_storage(v) ? v.clone() : s;
}

BnUnit extract_bn(const BnUnit& src, int c) {
  BnUnit out;
  out.gamma = copy_slice1(src.gamma, c);
  out.beta = copy_slice1(src.beta, c);
  out.gamma.set_requires_grad(true);
  out.beta.set_requires_grad(true);
  out.stats = BnStats<float>(c);
  std::copy_n(src.stats.running_mean.begin(), c, out.stats.running_mean.begin());
  std::copy_n(src.stats.running_var.begin(), c, out.stats.running_var.begin());
  out.stats.recal_count = src.stats.recal_count;
  return out;
}

}  // namespace

SubNetwork extract_subnet(const SuperNet& net, const space::Architecture& arch) {
  const auto groups = route(net, arch);
  SubNetwork out;
  out.space = net.space;
  out.arch = arch;
  out.stem = net.stem;
  out.stem.weight = net.stem.weight.clone();
  out.stem.weight.set_requires_grad(true);
  out.stem_bn = extract_bn(net.stem_bn, net.space.stem_channels);

  int in_c = net.space.stem_channels;
  for (std::size_t s = 0; s < net.stages.size(); ++s) {
    const auto& stage = net.stages[s];
    const auto& group = stage.groups[static_cast<std::size_t>(groups[s])];
    const auto& choice = arch.stages[s];
    const int out_c = stage.out_candidates[static_cast<std::size_t>(choice.out_idx)];
    std::vector<Block> blocks;
    for (int b = 0; b < choice.depth; ++b) {
      const auto& src = group.blocks[static_cast<std::size_t>(b)];
      const int mid_c =
          stage.out_candidates[static_cast<std::size_t>(choice.mid_idx[static_cast<std::size_t>(b)])];
      Block blk;
      blk.conv1 = src.conv1;
      blk.conv1.weight = copy_slice4(src.conv1.weight, mid_c, in_c);
      blk.conv1.weight.set_requires_grad(true);
      blk.bn1 = extract_bn(src.bn1, mid_c);
      blk.conv2 = src.conv2;
      blk.conv2.weight = copy_slice4(src.conv2.weight, out_c, mid_c);
      blk.conv2.weight.set_requires_grad(true);
      blk.bn2 = extract_bn(src.bn2, out_c);
      if (src.has_proj) {
        blk.has_proj = true;
        blk.proj = src.proj;
        blk.proj.weight = copy_slice4(src.proj.weight, out_c, in_c);
        blk.proj.weight.set_requires_grad(true);
        blk.bnp = extract_bn(src.bnp, out_c);
      }
      blocks.push_back(std::move(blk));
      in_c = out_c;
    }
    out.stage_blocks.push_back(std::move(blocks));
  }
  const auto& head = net.heads[static_cast<std::size_t>(groups.back())];
  TensorF hw = prefix_slice_cols(head.weight, in_c);
  out.head.weight = hw.same_storage(head.weight) ? head.weight.clone() : hw;
  out.head.bias = head.bias.clone();
  out.head.weight.set_requires_grad(true);
  out.head.bias.set_requires_grad(true);
  return out;
}

void bn_recalibrate(SuperNet& net, const space::Architecture& arch,
                    const std::vector<TensorF>& batches) {
  check(!batches.empty(), ErrorCode::Usage,
        "bn_recalibrate needs at least one batch");
  const auto groups = route(net, arch);
  net.stem_bn.stats.reset();
  for (std::size_t s = 0; s < net.stages.size(); ++s) {
    auto& group = net.stages[s].groups[static_cast<std::size_t>(groups[s])];
    for (int b = 0; b < arch.stages[s].depth; ++b) {
      auto& blk = group.blocks[static_cast<std::size_t>(b)];
      blk.bn1.stats.reset();
      blk.bn2.stats.reset();
      if (blk.has_proj) blk.bnp.stats.reset();
    }
  }
  for (const auto& batch : batches)
    forward(net, arch, batch, BnMode::Recalibrate);
}

void bn_recalibrate(SuperNet& net, const space::Architecture& arch,
                    const data::Dataset& ds, const std::vector<int>& pool,
                    int batch_size, int num_batches, std::uint64_t seed) {
  check(num_batches >= 1, ErrorCode::Usage, "num_batches must be >= 1");
  check(!pool.empty(), ErrorCode::Usage, "recalibration pool is empty");
  Rng rng = Rng(seed).split("bn-recal");
  std::vector<int> indices = pool;
  rng.shuffle(indices);
  std::vector<TensorF> batches;
  std::size_t cursor = 0;
  for (int i = 0; i < num_batches; ++i) {
    std::vector<int> idx;
    for (int j = 0; j < batch_size; ++j) {
      idx.push_back(indices[cursor]);
      cursor = (cursor + 1) % indices.size();
    }
    TensorF images;
    std::vector<int> labels;
    data::gather_batch(ds, idx, images, labels);
    batches.push_back(std::move(images));
  }
  bn_recalibrate(net, arch, batches);
}

void apply_inheritance(SuperNet& dst, SuperNet& src,
                       const split::InheritanceMap& map) {
  std::map<std::string, TensorView> dst_views, src_views;
  visit_tensors(dst, [&](const TensorView& v) { dst_views.emplace(v.name, v); });
  visit_tensors(src, [&](const TensorView& v) { src_views.emplace(v.name, v); });
  check(map.records.size() == dst_views.size(), ErrorCode::Usage,
        "inheritance map must cover every destination tensor");

  for (const auto& rec : map.records) {
    const auto dit = dst_views.find(rec.dst);
    const auto sit = src_views.find(rec.src);
    check(dit != dst_views.end(), ErrorCode::Usage,
          "inheritance destination " + rec.dst + " not found");
    check(sit != src_views.end(), ErrorCode::Usage,
          "inheritance source " + rec.src + " not found");
    const auto& dv = dit->second;
    const auto& sv = sit->second;
    check(rec.prefix == dv.shape, ErrorCode::Usage,
          "inheritance prefix must equal destination shape for " + rec.dst);
    check(dv.shape.size() == sv.shape.size(), ErrorCode::Usage,
          "rank mismatch for " + rec.dst);
    for (std::size_t i = 0; i < dv.shape.size(); ++i)
      check(dv.shape[i] <= sv.shape[i], ErrorCode::Usage,
            "destination exceeds source capacity for " + rec.dst);

    // generic prefix copy, up to 4 axes
    std::vector<int> d = dv.shape, sshape = sv.shape;
    while (d.size() < 4) {
      d.push_back(1);
      sshape.push_back(1);
    }
    const std::int64_t s3 = sshape[3], s2 = sshape[2] * s3, s1 = sshape[1] * s2;
    const std::int64_t d3 = d[3], d2 = d[2] * d3, d1 = d[1] * d2;
    for (int a = 0; a < d[0]; ++a)
      for (int b = 0; b < d[1]; ++b)
        for (int c = 0; c < d[2]; ++c)
          std::memcpy(dv.data + a * d1 + b * d2 + c * d3,
                      sv.data + a * s1 + b * s2 + c * s3,
                      sizeof(float) * static_cast<std::size_t>(d3));
  }
}

double evaluate_accuracy(SubNetwork& net, const data::Dataset& ds,
                         const std::vector<int>& indices, int batch_size) {
  check(!indices.empty(), ErrorCode::Usage, "evaluate_accuracy on empty set");
  std::size_t correct = 0;
  for (std::size_t start = 0; start < indices.size(); start += batch_size) {
    const std::size_t end = std::min(indices.size(), start + batch_size);
    std::vector<int> idx(indices.begin() + static_cast<std::ptrdiff_t>(start),
                         indices.begin() + static_cast<std::ptrdiff_t>(end));
    TensorF images;
    std::vector<int> labels;
    data::gather_batch(ds, idx, images, labels);
    TensorF logits = forward(net, images, BnMode::Eval);
    const int k = logits.dim(1);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const float* row = logits.data() + static_cast<std::int64_t>(i) * k;
      int best = 0;
      for (int j = 1; j < k; ++j)
        if (row[j] > row[best]) best = j;
      if (best == labels[i]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(indices.size());
}

}  // namespace fsnas::net
