// Copyright (c) 2026, The ReCo-KD Authors
// SPDX-License-Identifier: Apache-2.0

#include "recokd/distill.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "recokd/ops.hpp"

namespace recokd::distill {

using masks::RegionSelection;

std::vector<std::size_t> DistillConfig::active_stages() const {
  std::set<std::size_t> s;
  if (any_sard_term()) s.insert(stages.begin(), stages.end());
  if (msca) s.insert(ca_stages.begin(), ca_stages.end());
  return {s.begin(), s.end()};
}

void DistillConfig::validate(std::size_t num_stages) const {
  if (!(temperature > 0.0)) throw ValidationError("distill.temperature", "must be > 0");
  if (!(gamma >= 0.0)) throw ValidationError("distill.gamma", "must be >= 0");
  if (!(lambda >= 0.0)) throw ValidationError("distill.lambda", "must be >= 0");
  if (!(sard_weight >= 0.0)) throw ValidationError("distill.sard_weight", "must be >= 0");
  if (gc_ratio < 1) throw ValidationError("distill.gc_ratio", "must be >= 1");
  if (any_sard_term() && stages.empty()) throw ValidationError("distill.stages", "must be non-empty when a region/mask term is on");
  if (msca && ca_stages.empty()) throw ValidationError("distill.ca_stages", "must be non-empty when msca is on");
  auto check = [&](const std::vector<std::size_t>& list, const char* field) {
    std::set<std::size_t> seen;
    for (auto s : list) {
      if (s >= num_stages) {
        throw ValidationError(field, "stage " + std::to_string(s) + " outside [0, " + std::to_string(num_stages) + ")");
      }
      if (!seen.insert(s).second) throw ValidationError(field, "duplicate stage " + std::to_string(s));
    }
  };
  check(stages, "distill.stages");
  check(ca_stages, "distill.ca_stages");
}

namespace {

Tensor uniform_tensor(Shape shape, double bound, Rng& rng) {
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = rng.uniform(-bound, bound);
  return Tensor::from(std::move(shape), std::move(v), true);
}

Tensor as_batch(const Tensor& x) {
  if (x.dim() == 5) return x;
  if (x.dim() == 4) {
    Shape s = x.shape();
    s.insert(s.begin(), 1);
    return reshape(x, s);
  }
  throw ShapeError("expected features [C,D,H,W] or [N,C,D,H,W], got " + to_string(x.shape()));
}

Tensor like_input(const Tensor& batched, const Tensor& original) {
  return original.dim() == 4 ? reshape(batched, original.shape()) : batched;
}

Tensor zero_scalar() { return Tensor::scalar(0.0); }

void require_same(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
}

}  // namespace

AdapterParams AdapterParams::create(std::size_t student_channels, std::size_t teacher_channels, Rng& rng) {
  // Linear map: variance-preserving uniform bound sqrt(3 / fan_in).
  const double bound = std::sqrt(3.0 / static_cast<double>(student_channels));
  return {uniform_tensor({teacher_channels, student_channels, 1, 1, 1}, bound, rng),
          Tensor::zeros({teacher_channels}, true)};
}

AdapterParams AdapterParams::identity(std::size_t channels) {
  Tensor w = Tensor::zeros({channels, channels, 1, 1, 1}, true);
  for (std::size_t c = 0; c < channels; ++c) w.mutable_data()[c * channels + c] = 1.0;
  return {w, Tensor::zeros({channels}, true)};
}

Tensor apply_adapter(const std::optional<AdapterParams>& adapter, const Tensor& student) {
  if (!adapter) return student;
  Tensor x = as_batch(student);
  if (x.shape()[1] != adapter->in_channels()) {
    throw ShapeError("adapter expects " + std::to_string(adapter->in_channels()) + " student channels, got " +
                     to_string(student.shape()));
  }
  Tensor y = conv3d(x, adapter->weight, adapter->bias);
  if (student.dim() == 4) {
    Shape s = y.shape();
    s.erase(s.begin());
    return reshape(y, s);
  }
  return y;
}

GCBlockParams GCBlockParams::create(std::size_t channels, std::size_t ratio, Rng& rng, bool zero_output) {
  const std::size_t bottleneck = std::max<std::size_t>(2, channels / std::max<std::size_t>(1, ratio));
  GCBlockParams p;
  p.ratio = ratio;
  const double in_bound = std::sqrt(3.0 / static_cast<double>(channels));
  p.key_weight = uniform_tensor({1, channels, 1, 1, 1}, in_bound, rng);
  p.v1_weight = uniform_tensor({bottleneck, channels, 1, 1, 1}, in_bound, rng);
  p.v1_bias = Tensor::zeros({bottleneck}, true);
  p.norm_gain = Tensor::full({bottleneck}, 1.0, true);
  p.norm_bias = Tensor::zeros({bottleneck}, true);
  if (zero_output) {
    p.v2_weight = Tensor::zeros({channels, bottleneck, 1, 1, 1}, true);
  } else {
    p.v2_weight = uniform_tensor({channels, bottleneck, 1, 1, 1}, std::sqrt(3.0 / static_cast<double>(bottleneck)), rng);
  }
  p.v2_bias = Tensor::zeros({channels}, true);
  return p;
}

std::vector<std::pair<std::string, Tensor>> GCBlockParams::named() const {
  return {{"key.weight", key_weight}, {"v1.weight", v1_weight}, {"v1.bias", v1_bias}, {"norm.gain", norm_gain},
          {"norm.bias", norm_bias},   {"v2.weight", v2_weight}, {"v2.bias", v2_bias}};
}

Tensor gc_block(const Tensor& features, const GCBlockParams& params) {
  Tensor x = as_batch(features);
  if (x.shape()[1] != params.channels()) {
    throw ShapeError("gc_block expects " + std::to_string(params.channels()) + " channels, got " +
                     to_string(features.shape()));
  }
  Tensor logits = conv3d(x, params.key_weight, std::nullopt);          // [N,1,D,H,W]
  Tensor attention = softmax_temperature(logits, {2, 3, 4}, 1.0);       // per sample over voxels
  Tensor context = sum(mul(x, attention), {2, 3, 4}, true);            // [N,C,1,1,1]
  Tensor t = conv3d(context, params.v1_weight, params.v1_bias);        // [N,Cb,1,1,1]
  t = relu(group_norm(t, 1, params.norm_gain, params.norm_bias));
  t = conv3d(t, params.v2_weight, params.v2_bias);                     // [N,C,1,1,1]
  return like_input(add(x, t), features);
}

Tensor loss_feat(const Tensor& teacher, const Tensor& student, const std::optional<AdapterParams>& adapter) {
  Tensor aligned = apply_adapter(adapter, student);
  require_same(teacher, aligned, "loss_feat");
  return sum_all(square(sub(detach(teacher), aligned)));
}

Tensor loss_ac(const masks::ActivationMasks& teacher, const masks::ActivationMasks& student, double gamma) {
  require_same(teacher.spatial, student.spatial, "loss_ac spatial masks");
  require_same(teacher.channel, student.channel, "loss_ac channel masks");
  if (gamma == 0.0) return zero_scalar();
  Tensor spatial = sum_all(abs(sub(detach(teacher.spatial), student.spatial)));
  Tensor channel = sum_all(abs(sub(detach(teacher.channel), student.channel)));
  return scale(add(spatial, channel), gamma);
}

Tensor loss_sard_aligned(const Tensor& teacher, const Tensor& aligned_student, const masks::MaskBundle& bundle,
                         RegionSelection selection) {
  require_same(teacher, aligned_student, "loss_sard");
  if (teacher.dim() != 4) throw ShapeError("loss_sard expects [C,D,H,W] features, got " + to_string(teacher.shape()));
  const auto& s = teacher.shape();
  const io::Dims3 spatial{s[1], s[2], s[3]};
  if (bundle.scale.shape != spatial || bundle.activation.spatial.shape() != Shape{s[1], s[2], s[3]} ||
      bundle.activation.channel.numel() != s[0]) {
    throw ShapeError("mask bundle " + bundle.scale.shape.str() + " does not match features " + to_string(s));
  }
  // M^r S^r summed over the selected regions collapses to one grid because
  // every voxel has exactly one owner.
  std::vector<double> w = masks::selected_scale(bundle.scale, selection);
  const auto& vs = bundle.activation.spatial.data();
  for (std::size_t v = 0; v < w.size(); ++v) w[v] *= vs[v];
  Tensor spatial_weight = Tensor::from({s[1], s[2], s[3]}, std::move(w));
  Tensor channel_weight = reshape(detach(bundle.activation.channel), {s[0], 1, 1, 1});
  Tensor err = square(sub(detach(teacher), aligned_student));
  return sum_all(mul(mul(err, spatial_weight), channel_weight));
}

Tensor loss_sard(const Tensor& teacher, const Tensor& student, const std::optional<AdapterParams>& adapter,
                 const masks::MaskBundle& bundle, RegionSelection selection) {
  return loss_sard_aligned(teacher, apply_adapter(adapter, student), bundle, selection);
}

MsSardTerms loss_ms_sard(const std::vector<StageFeatures>& stages,
                         const std::vector<std::optional<AdapterParams>>& adapters,
                         const std::vector<masks::MaskBundle>& bundles, const DistillConfig& config) {
  MsSardTerms out{zero_scalar(), zero_scalar(), zero_scalar()};
  const bool region = config.sard_fg || config.sard_bg;
  if (!region && !config.mask_align) return out;
  if (config.stages.empty()) throw ValidationError("distill.stages", "must be non-empty when a region/mask term is on");

  for (auto l : config.stages) {
    if (l >= stages.size() || l >= adapters.size() || l >= bundles.size()) {
      throw ShapeError("stage " + std::to_string(l) + " missing from the per-stage feature/adapter/mask lists");
    }
    const auto& f = stages[l];
    Tensor aligned = apply_adapter(adapters[l], f.student);
    if (region) {
      if (config.sard_fg && config.sard_bg && !config.sard_split) {
        out.sard = add(out.sard, loss_sard_aligned(f.teacher, aligned, bundles[l], RegionSelection::all));
      } else {
        if (config.sard_fg) {
          out.sard = add(out.sard, loss_sard_aligned(f.teacher, aligned, bundles[l], RegionSelection::foreground));
        }
        if (config.sard_bg) {
          out.sard = add(out.sard, loss_sard_aligned(f.teacher, aligned, bundles[l], RegionSelection::background));
        }
      }
    }
    if (config.mask_align) {
      auto student_masks = masks::build_activation_masks(aligned, config.temperature);
      out.ac = add(out.ac, loss_ac(bundles[l].activation, student_masks, config.gamma));
    }
  }
  if (config.sard_weight != 1.0) out.sard = scale(out.sard, config.sard_weight);
  out.total = add(out.sard, out.ac);
  return out;
}

Tensor loss_ms_ca(const std::vector<StageFeatures>& features, const std::vector<std::optional<AdapterParams>>& adapters,
                  const std::vector<GCBlockParams>& gc_params, double lambda, const std::vector<std::size_t>& stages) {
  Tensor total = zero_scalar();
  if (lambda == 0.0) return total;
  for (auto l : stages) {
    if (l >= features.size() || l >= adapters.size() || l >= gc_params.size()) {
      throw ShapeError("stage " + std::to_string(l) + " missing from the per-stage feature/adapter/GC lists");
    }
    Tensor aligned = apply_adapter(adapters[l], features[l].student);
    require_same(features[l].teacher, aligned, "loss_ms_ca");
    Tensor rt = gc_block(detach(features[l].teacher), gc_params[l]);
    Tensor rs = gc_block(aligned, gc_params[l]);
    total = add(total, sum_all(square(sub(rt, rs))));
  }
  return scale(total, lambda);
}

TaskLoss loss_task(const Tensor& logits, const std::vector<const io::LabelVolume*>& labels) {
  Tensor x = as_batch(logits);
  const auto& s = x.shape();
  const std::size_t n = s[0], k = s[1];
  const io::Dims3 spatial{s[2], s[3], s[4]};
  if (labels.size() != n) {
    throw ShapeError("loss_task: " + std::to_string(labels.size()) + " label volumes for batch of " + std::to_string(n));
  }
  std::vector<double> onehot(x.numel(), 0.0);
  std::vector<double> truth_sum(n * k, 0.0);
  const std::size_t vox = spatial.voxels();
  for (std::size_t i = 0; i < n; ++i) {
    const auto& lab = *labels[i];
    if (lab.mode != io::LabelMode::exclusive) throw InvalidArgumentError("loss_task needs exclusive labels");
    if (lab.num_foreground + 1 != k) {
      throw ShapeError("loss_task: logits have " + std::to_string(k) + " classes, labels have " +
                       std::to_string(lab.num_foreground + 1));
    }
    if (lab.shape != spatial) throw ShapeError("loss_task: labels " + lab.shape.str() + " vs logits " + to_string(s));
    for (std::size_t v = 0; v < vox; ++v) {
      const auto r = static_cast<std::size_t>(lab.ids[v]);
      onehot[(i * k + r) * vox + v] = 1.0;
      truth_sum[i * k + r] += 1.0;
    }
  }
  Tensor target = Tensor::from(s, std::move(onehot));
  Tensor logp = log_softmax(x, 1);
  TaskLoss out;
  out.ce = scale(sum_all(mul(target, logp)), -1.0 / static_cast<double>(n * vox));

  if (k < 2) {
    out.dice = zero_scalar();
  } else {
    Tensor p = exp(logp);
    Tensor inter = sum(mul(p, target), {2, 3, 4});  // [N,K]
    Tensor pred = sum(p, {2, 3, 4});
    Tensor num = add_scalar(scale(inter, 2.0), kDiceSmooth);
    Tensor den = add_scalar(add(pred, Tensor::from({n, k}, truth_sum)), kDiceSmooth);
    std::vector<double> fg(k, 1.0);
    fg[0] = 0.0;
    Tensor per_class = mul(div(num, den), Tensor::from({k}, std::move(fg)));
    Tensor mean_dice = scale(sum_all(per_class), 1.0 / static_cast<double>(n * (k - 1)));
    out.dice = add_scalar(neg(mean_dice), 1.0);
  }
  out.total = add(out.dice, out.ce);
  return out;
}

TaskLoss loss_task(const Tensor& logits, const io::LabelVolume& labels) { return loss_task(logits, {&labels}); }

Tensor loss_total(const Tensor& task, const Tensor& ms_sard, const Tensor& ms_ca) {
  for (const Tensor* t : {&task, &ms_sard, &ms_ca}) {
    if (t->numel() != 1) throw ShapeError("loss_total expects scalar terms, got " + to_string(t->shape()));
  }
  return add(add(task, ms_sard), ms_ca);
}

}  // namespace recokd::distill
