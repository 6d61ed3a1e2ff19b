// Copyright (c) 2026, The ReCo-KD Authors
// SPDX-License-Identifier: Apache-2.0

#include "recokd/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>

#include "recokd/config.hpp"
#include "recokd/hash.hpp"
#include "recokd/metrics.hpp"
#include "recokd/ops.hpp"
#include "recokd/rng.hpp"

namespace recokd::train {

using models::Mode;
using models::NetworkState;
using nlohmann::json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string fmt(double v) {
  if (std::isnan(v)) return "";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

json num_or_null(double v) { return std::isnan(v) ? json(nullptr) : json(v); }

// Mean over defined (non-NaN) entries; NaN if none.
double nan_mean(const std::vector<double>& v) {
  double s = 0.0;
  std::size_t n = 0;
  for (double x : v) {
    if (!std::isnan(x)) {
      s += x;
      ++n;
    }
  }
  return n ? s / static_cast<double>(n) : kNaN;
}

class Sgd {
 public:
  Sgd(std::vector<Tensor> params, double momentum, double weight_decay, double clip)
      : params_(std::move(params)), buf_(params_.size()), mu_(momentum), wd_(weight_decay), clip_(clip) {}

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  void step(double lr) {
    double coef = 1.0;
    if (clip_ > 0.0) {
      double sq = 0.0;
      for (const auto& p : params_) {
        if (!p.has_grad()) continue;
        for (double g : p.grad()) sq += g * g;
      }
      coef = std::min(1.0, clip_ / (std::sqrt(sq) + 1e-6));
    }
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& p = params_[i];
      if (!p.has_grad()) continue;
      auto data = p.mutable_data();
      auto grad = p.grad();
      auto& buf = buf_[i];
      const bool first = buf.empty();
      if (first) buf.resize(data.size());
      for (std::size_t k = 0; k < data.size(); ++k) {
        const double g = coef * grad[k] + wd_ * data[k];
        buf[k] = first ? g : mu_ * buf[k] + g;
        data[k] -= lr * (g + mu_ * buf[k]);
      }
    }
  }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> buf_;
  double mu_, wd_, clip_;
};

void shuffle(std::vector<std::size_t>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
}

std::vector<std::int32_t> argmax_labels(const Tensor& logits) {
  const auto& s = logits.shape();  // [1,K,D,H,W]
  const std::size_t k = s[1], vox = s[2] * s[3] * s[4];
  const auto d = logits.data();
  std::vector<std::int32_t> out(vox, 0);
  for (std::size_t v = 0; v < vox; ++v) {
    double best = d[v];
    for (std::size_t c = 1; c < k; ++c) {
      if (d[c * vox + v] > best) {
        best = d[c * vox + v];
        out[v] = static_cast<std::int32_t>(c);
      }
    }
  }
  return out;
}

double val_mdice(const NetworkState& net, const Dataset& data, const std::vector<std::size_t>& idx) {
  const std::size_t r = net.plan.num_classes - 1;
  std::vector<std::vector<double>> per_class(r);
  for (auto i : idx) {
    const auto pred = predict(net, data[i].image);
    for (std::size_t c = 1; c <= r; ++c) {
      per_class[c - 1].push_back(metrics::dice(metrics::class_grid(pred, static_cast<std::int32_t>(c)),
                                               metrics::class_grid(data[i].labels.ids, static_cast<std::int32_t>(c))));
    }
  }
  std::vector<double> means;
  for (const auto& v : per_class) means.push_back(nan_mean(v));
  return nan_mean(means);
}

void check_dataset(const Dataset& data, const models::NetworkPlan& plan) {
  if (data.empty()) throw InvalidArgumentError("empty training dataset");
  for (const auto& c : data) {
    c.image.validate();
    c.labels.validate();
    if (c.labels.mode != io::LabelMode::exclusive) throw InvalidArgumentError(c.id + ": training needs exclusive labels");
    if (c.labels.num_foreground + 1 != plan.num_classes) {
      throw ShapeError(c.id + ": " + std::to_string(c.labels.num_foreground) + " foreground classes, plan has " +
                       std::to_string(plan.num_classes) + " classes");
    }
    if (c.image.modalities != plan.in_channels) throw ShapeError(c.id + ": modality count does not match the plan");
    if (!(c.image.shape == data.front().image.shape) || !(c.labels.shape == c.image.shape)) {
      throw ShapeError(c.id + ": all cases must share one shape");
    }
  }
}

// Per-case teacher features and masks; fixed because the teacher is frozen
// and training is on whole, unaugmented volumes.
struct TeacherCase {
  std::vector<Tensor> features;              // [C_l, D_l, H_l, W_l] per stage
  std::vector<masks::MaskBundle> bundles;    // filled on stages the SARD terms read
};

struct Engine {
  const Dataset& data;
  const NetworkState* teacher;  // null for plain training
  const distill::DistillConfig& dconfig;
  const TrainConfig& config;
  const TrainHooks& hooks;
  NetworkState student;
  DistillHeads heads;
  std::map<std::size_t, TeacherCase> cache;

  const TeacherCase& teacher_case(std::size_t i) {
    auto it = cache.find(i);
    if (it != cache.end()) return it->second;
    TeacherCase tc;
    const auto fr = models::forward_with_taps(*teacher, models::make_batch({&data[i].image}), true);
    const std::size_t stages = teacher->plan.num_stages();
    tc.features.resize(stages);
    tc.bundles.resize(stages);
    for (std::size_t l = 0; l < stages; ++l) tc.features[l] = select(fr.stage_features[l], 0);
    if (dconfig.any_sard_term()) {
      for (auto l : dconfig.stages) {
        const auto& s = tc.features[l].shape();
        const auto labels = io::downsample_labels(data[i].labels, {s[1], s[2], s[3]});
        tc.bundles[l] = masks::build_stage_masks(labels, tc.features[l], dconfig.temperature);
      }
    }
    return cache.emplace(i, std::move(tc)).first->second;
  }

  // Returns the total loss; fills the loss columns of `log`.
  Tensor batch_loss(const std::vector<std::size_t>& batch, StepLog& log) {
    std::vector<const io::ImageVolume*> images;
    std::vector<const io::LabelVolume*> labels;
    for (auto i : batch) {
      images.push_back(&data[i].image);
      labels.push_back(&data[i].labels);
    }
    const auto fr = models::forward_with_taps(student, models::make_batch(images));
    const auto task = distill::loss_task(fr.logits, labels);
    Tensor sard = Tensor::scalar(0.0), ca = Tensor::scalar(0.0);
    const double inv_n = 1.0 / static_cast<double>(batch.size());
    const std::size_t stages = student.plan.num_stages();

    if (teacher && dconfig.any_sard_term()) {
      Tensor acc = Tensor::scalar(0.0);
      for (std::size_t b = 0; b < batch.size(); ++b) {
        const auto& tc = teacher_case(batch[b]);
        std::vector<distill::StageFeatures> sf(stages);
        for (auto l : dconfig.stages) {
          sf[l] = {tc.features[l], select(fr.stage_features[l], b)};
          const auto& ts = sf[l].teacher.shape();
          const auto& ss = sf[l].student.shape();
          if (!std::equal(ts.begin() + 1, ts.end(), ss.begin() + 1, ss.end())) {
            throw Error("internal: teacher/student stage " + std::to_string(l) + " spatial shapes differ");
          }
        }
        acc = add(acc, distill::loss_ms_sard(sf, heads.adapters, tc.bundles, dconfig).total);
      }
      sard = scale(acc, inv_n);
    }
    if (teacher && dconfig.msca) {
      std::vector<distill::StageFeatures> sf(stages);
      for (auto l : dconfig.ca_stages) {
        std::vector<Tensor> parts;
        for (auto i : batch) parts.push_back(teacher_case(i).features[l]);
        sf[l] = {stack(parts), fr.stage_features[l]};
      }
      ca = scale(distill::loss_ms_ca(sf, heads.adapters, heads.gc, dconfig.lambda, dconfig.ca_stages), inv_n);
    }
    Tensor total = distill::loss_total(task.total, sard, ca);
    log.loss_task = task.total.item();
    log.loss_ms_sard = sard.item();
    log.loss_ms_ca = ca.item();
    log.loss_total = total.item();
    return total;
  }

  void save(const NetworkState& net, const std::string& name, std::uint64_t step, const Rng& rng, json extra) {
    if (hooks.checkpoint_dir.empty()) return;
    models::Checkpoint ck{net, rng.state(), step, std::move(extra)};
    ck.state.mode = Mode::infer;
    models::save_checkpoint(ck, hooks.checkpoint_dir / name);
  }

  TrainResult run() {
    TrainResult res;
    res.split = split_dataset(data.size(), config.val_fraction, config.seed);
    std::vector<Tensor> params = student.tensors();
    for (auto& t : heads.tensors()) params.push_back(t);
    Sgd opt(params, config.momentum, config.weight_decay, config.grad_clip);

    Rng rng(config.seed, 2);
    std::vector<std::size_t> order = res.split.train;
    const std::size_t per_epoch = (order.size() + config.batch_size - 1) / config.batch_size;
    const std::uint64_t total = config.epochs * per_epoch;
    std::uint64_t step = 0;
    std::optional<NetworkState> best;
    double best_score = -1.0;

    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
      shuffle(order, rng);
      for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
        std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(start),
                                       order.begin() + static_cast<std::ptrdiff_t>(
                                                           std::min(order.size(), start + config.batch_size)));
        StepLog log;
        log.step = step;
        log.lr = config.lr0 * std::pow(1.0 - static_cast<double>(step) / static_cast<double>(total),
                                       config.poly_exponent);
        opt.zero_grad();
        Tensor loss = batch_loss(batch, log);
        if (!std::isfinite(log.loss_total)) {
          throw DivergenceError(static_cast<std::int64_t>(step), "non-finite loss " + fmt(log.loss_total));
        }
        loss.backward();
        opt.step(log.lr);
        for (const auto& t : params) {
          if (!std::all_of(t.data().begin(), t.data().end(), [](double v) { return std::isfinite(v); })) {
            throw DivergenceError(static_cast<std::int64_t>(step), "non-finite parameters after the update");
          }
        }
        res.log.push_back(log);
        if (hooks.on_step) hooks.on_step(log);
        ++step;
      }
      if (!res.split.val.empty()) {
        const double score = val_mdice(student, data, res.split.val);
        if (score > best_score) {
          best_score = score;
          best = student.clone();
          res.best_epoch = epoch;
          res.best_val_mdice = score;
        }
      }
      if (config.checkpoint_every && epoch % config.checkpoint_every == 0) {
        char name[32];
        std::snprintf(name, sizeof name, "epoch_%04zu", epoch);
        save(student, name, step, rng, {{"epoch", epoch}});
      }
    }
    save(student, "final", step, rng, {{"epoch", config.epochs}});
    if (!best) {
      best = student.clone();
      res.best_epoch = config.epochs;
      res.best_val_mdice = kNaN;
    }
    res.net = std::move(*best);
    res.net.set_mode(Mode::infer);
    res.rng_state = rng.state();
    res.steps = step;
    save(res.net, "best", step, rng,
         {{"epoch", res.best_epoch}, {"val_mdice", num_or_null(res.best_val_mdice)}});
    return res;
  }
};

TrainResult train_impl(const Dataset& data, const NetworkState* teacher, const models::NetworkPlan& plan,
                       const distill::DistillConfig& dconfig, const TrainConfig& config, const TrainHooks& hooks) {
  check_dataset(data, plan);
  config.validate(plan, data.front().image.shape);
  Engine e{data, teacher, dconfig, config, hooks, models::build_network(plan), {}, {}};
  e.student.set_mode(Mode::train);
  if (teacher && dconfig.any_term()) {
    e.heads = make_heads(teacher->plan, plan, dconfig, config.seed);
  } else {
    e.teacher = nullptr;
  }
  return e.run();
}

}  // namespace

void TrainConfig::validate(const models::NetworkPlan& plan, io::Dims3 case_shape) const {
  if (epochs == 0) throw ValidationError("train.epochs", "must be >= 1");
  if (batch_size == 0) throw ValidationError("train.batch_size", "must be >= 1");
  if (!(lr0 >= 0.0)) throw ValidationError("train.lr0", "must be >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ValidationError("train.momentum", "must be in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ValidationError("train.weight_decay", "must be >= 0");
  if (!(grad_clip >= 0.0)) throw ValidationError("train.grad_clip", "must be >= 0");
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) throw ValidationError("train.val_fraction", "must be in [0, 1)");
  const io::Dims3 p = patch_size.value_or(case_shape);
  if (!(p == case_shape)) {
    throw ValidationError("train.patch_size", "whole-volume training: must equal the case shape " + case_shape.str());
  }
  const std::size_t s = plan.total_stride();
  if (p.d % s || p.h % s || p.w % s) {
    throw ValidationError("train.patch_size", p.str() + " is not divisible by the total stride " + std::to_string(s));
  }
}

std::string step_log_csv(const std::vector<StepLog>& log) {
  std::string out = "step,lr,loss_task,loss_ms_sard,loss_ms_ca,loss_total\n";
  for (const auto& s : log) {
    out += std::to_string(s.step) + "," + fmt(s.lr) + "," + fmt(s.loss_task) + "," + fmt(s.loss_ms_sard) + "," +
           fmt(s.loss_ms_ca) + "," + fmt(s.loss_total) + "\n";
  }
  return out;
}

Split split_dataset(std::size_t n, double val_fraction, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  Rng rng(seed, 4);
  shuffle(idx, rng);
  std::size_t nval = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(n)));
  if (n > 0) nval = std::min(nval, n - 1);
  Split s;
  s.val.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(nval));
  s.train.assign(idx.begin() + static_cast<std::ptrdiff_t>(nval), idx.end());
  return s;
}

TrainResult train_plain(const Dataset& data, const models::NetworkPlan& plan, const TrainConfig& config,
                        const TrainHooks& hooks) {
  distill::DistillConfig off;
  off.sard_fg = off.sard_bg = off.mask_align = off.msca = false;
  return train_impl(data, nullptr, plan, off, config, hooks);
}

TrainResult train_teacher(const Dataset& data, const models::NetworkPlan& plan, const TrainConfig& config,
                          const TrainHooks& hooks) {
  if (plan.width_factor != 0) throw ValidationError("plan.width_factor", "a teacher is trained at full width (t = 0)");
  return train_plain(data, plan, config, hooks);
}

std::vector<Tensor> DistillHeads::tensors() const {
  std::vector<Tensor> out;
  for (const auto& a : adapters) {
    if (a) {
      out.push_back(a->weight);
      out.push_back(a->bias);
    }
  }
  for (const auto& g : gc) {
    if (!g.key_weight.defined()) continue;
    for (const auto& [name, t] : g.named()) out.push_back(t);
  }
  return out;
}

DistillHeads make_heads(const models::NetworkPlan& teacher, const models::NetworkPlan& student,
                        const distill::DistillConfig& config, std::uint64_t seed) {
  if (!teacher.same_topology(student)) {
    throw InvalidArgumentError("student plan must differ from the teacher plan only in channel widths");
  }
  config.validate(teacher.num_stages());
  Rng rng(seed, 3);
  DistillHeads h;
  const std::size_t stages = teacher.num_stages();
  h.adapters.resize(stages);
  h.gc.resize(stages);
  for (auto l : config.active_stages()) {
    const std::size_t ct = teacher.stage_channels[l], cs = student.stage_channels[l];
    if (ct != cs) h.adapters[l] = distill::AdapterParams::create(cs, ct, rng);
  }
  if (config.msca) {
    for (auto l : config.ca_stages) {
      h.gc[l] = distill::GCBlockParams::create(teacher.stage_channels[l], config.gc_ratio, rng);
    }
  }
  return h;
}

TrainResult distill_student(const Dataset& data, const NetworkState& teacher, const models::NetworkPlan& student_plan,
                            const distill::DistillConfig& dconfig, const TrainConfig& config,
                            const TrainHooks& hooks) {
  if (teacher.mode != Mode::infer) throw InvalidArgumentError("the teacher must be in infer mode");
  if (!teacher.plan.same_topology(student_plan)) {
    throw InvalidArgumentError("student plan must differ from the teacher plan only in channel widths");
  }
  dconfig.validate(teacher.plan.num_stages());
  return train_impl(data, &teacher, student_plan, dconfig, config, hooks);
}

// ---------------------------------------------------------------------------

std::vector<std::int32_t> predict(const NetworkState& net, const io::ImageVolume& image) {
  const auto fr = models::forward_with_taps(net, models::make_batch({&image}));
  return argmax_labels(fr.logits);
}

CaseMetrics score_case(const std::vector<std::int32_t>& pred, const io::LabelVolume& truth) {
  if (truth.mode != io::LabelMode::exclusive) throw InvalidArgumentError("evaluation needs exclusive labels");
  if (pred.size() != truth.ids.size()) throw ShapeError("prediction and truth differ in size");
  CaseMetrics m;
  for (std::size_t c = 1; c <= truth.num_foreground; ++c) {
    const auto p = metrics::class_grid(pred, static_cast<std::int32_t>(c));
    const auto g = metrics::class_grid(truth.ids, static_cast<std::int32_t>(c));
    m.dice.push_back(metrics::dice(p, g));
    m.hd95.push_back(metrics::hd95(p, g, truth.shape));
  }
  return m;
}

EvalReport evaluate(const NetworkState& net, const Dataset& data) {
  EvalReport r;
  r.num_classes = net.plan.num_classes - 1;
  for (const auto& c : data) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto pred = predict(net, c.image);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (c.labels.num_foreground != r.num_classes) throw ShapeError(c.id + ": class count differs from the network");
    auto m = score_case(pred, c.labels);
    m.id = c.id;
    m.seconds = secs;
    r.cases.push_back(std::move(m));
  }
  for (std::size_t k = 0; k < r.num_classes; ++k) {
    std::vector<double> d, h;
    for (const auto& c : r.cases) {
      d.push_back(c.dice[k]);
      h.push_back(c.hd95[k]);
    }
    r.class_dice.push_back(nan_mean(d));
    r.class_hd95.push_back(nan_mean(h));
  }
  r.mdice = nan_mean(r.class_dice);
  return r;
}

std::string report_json(const EvalReport& r) {
  auto arr = [](const std::vector<double>& v) {
    json a = json::array();
    for (double x : v) a.push_back(num_or_null(x));
    return a;
  };
  json cases = json::array();
  for (const auto& c : r.cases) cases.push_back({{"id", c.id}, {"dice", arr(c.dice)}, {"hd95", arr(c.hd95)}});
  json j{{"num_classes", r.num_classes},
         {"mdice", num_or_null(r.mdice)},
         {"class_dice", arr(r.class_dice)},
         {"class_hd95", arr(r.class_hd95)},
         {"hd95_unit", "voxel"},
         {"cases", cases}};
  return j.dump(2) + "\n";
}

std::string report_csv(const EvalReport& r) {
  std::string out = "case_id,class_id,dice,hd95\n";
  for (const auto& c : r.cases) {
    for (std::size_t k = 0; k < r.num_classes; ++k) {
      out += c.id + "," + std::to_string(k + 1) + "," + fmt(c.dice[k]) + "," + fmt(c.hd95[k]) + "\n";
    }
  }
  for (std::size_t k = 0; k < r.num_classes; ++k) {
    out += "mean," + std::to_string(k + 1) + "," + fmt(r.class_dice[k]) + "," + fmt(r.class_hd95[k]) + "\n";
  }
  return out;
}

std::string timing_json(const EvalReport& r) {
  json cases = json::array();
  double total = 0.0;
  for (const auto& c : r.cases) {
    cases.push_back({{"id", c.id}, {"seconds", c.seconds}});
    total += c.seconds;
  }
  json j{{"cases", cases}, {"mean_seconds", r.cases.empty() ? 0.0 : total / static_cast<double>(r.cases.size())}};
  return j.dump(2) + "\n";
}

// ---------------------------------------------------------------------------

std::string config_hash(const distill::DistillConfig& c) {
  return sha256_hex(config::distill_to_json(c).dump()).substr(0, 16);
}

AblationResult run_ablation(const Dataset& data, const Dataset& eval_data, const NetworkState& teacher,
                            const models::NetworkPlan& student_plan, const std::vector<AblationEntry>& matrix,
                            const TrainConfig& config) {
  for (const auto& e : matrix) e.config.validate(teacher.plan.num_stages());
  auto timed_row = [&](const std::string& name, const distill::DistillConfig& dc, bool plain) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto res = plain ? train_plain(data, student_plan, config) : distill_student(data, teacher, student_plan, dc, config);
    const auto rep = evaluate(res.net, eval_data);
    AblationRow row;
    row.name = name;
    row.config_hash = config_hash(dc);
    row.mdice = rep.mdice;
    row.class_dice = rep.class_dice;
    row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return row;
  };
  distill::DistillConfig off;
  off.sard_fg = off.sard_bg = off.mask_align = off.msca = false;
  AblationResult out;
  out.baseline = timed_row("no-kd", off, true);
  out.baseline.delta_mdice = 0.0;
  for (const auto& e : matrix) {
    auto row = timed_row(e.name, e.config, false);
    row.delta_mdice = row.mdice - out.baseline.mdice;
    out.rows.push_back(std::move(row));
  }
  return out;
}

std::string ablation_csv(const AblationResult& r) {
  std::string out = "name,config_hash,mdice";
  for (std::size_t k = 0; k < r.baseline.class_dice.size(); ++k) out += ",dice_" + std::to_string(k + 1);
  out += ",delta_mdice\n";
  auto line = [&](const AblationRow& row) {
    out += row.name + "," + row.config_hash + "," + fmt(row.mdice);
    for (double d : row.class_dice) out += "," + fmt(d);
    out += "," + fmt(row.delta_mdice) + "\n";
  };
  line(r.baseline);
  for (const auto& row : r.rows) line(row);
  return out;
}

std::string ablation_timing_csv(const AblationResult& r) {
  std::string out = "name,seconds\n";
  out += r.baseline.name + "," + fmt(r.baseline.seconds) + "\n";
  for (const auto& row : r.rows) out += row.name + "," + fmt(row.seconds) + "\n";
  return out;
}

}  // namespace recokd::train
