// Copyright (c) 2026, The ReCo-KD Authors
// SPDX-License-Identifier: Apache-2.0

#include "recokd/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "recokd/distill.hpp"
#include "recokd/network.hpp"
#include "recokd/ops.hpp"

namespace recokd::gradcheck {

namespace {

struct Eval {
  double value;
  std::vector<std::uint8_t> kinks;
};

Eval evaluate(const std::function<Tensor()>& loss) {
  KinkRecorder rec;
  const double v = loss().item();
  return {v, rec.pattern()};
}

}  // namespace

CheckResult check(const std::string& name, const std::function<Tensor()>& loss, std::vector<NamedTensor> params,
                  Rng& rng, const Options& options) {
  CheckResult res;
  res.loss = name;
  std::size_t total = 0;
  for (auto& p : params) {
    if (!p.value.requires_grad()) throw InvalidArgumentError("gradcheck parameter " + p.name + " does not require grad");
    p.value.zero_grad();
    total += p.value.numel();
  }
  if (total == 0) throw InvalidArgumentError("gradcheck: no parameters");
  const Tensor base = loss();
  const double floor = 1e-6 * std::max(1.0, std::abs(base.item()));
  base.backward();
  std::vector<std::vector<double>> analytic;
  for (auto& p : params) {
    const auto g = p.value.has_grad() ? p.value.grad() : std::span<const double>();
    analytic.emplace_back(g.begin(), g.end());
    analytic.back().resize(p.value.numel(), 0.0);
  }

  std::size_t skips_in_row = 0;
  while (res.checked < options.coords) {
    std::size_t flat = rng.below(total), which = 0;
    while (flat >= params[which].value.numel()) flat -= params[which++].value.numel();
    auto data = params[which].value.mutable_data();
    const double orig = data[flat];
    data[flat] = orig + options.step;
    const Eval plus = evaluate(loss);
    data[flat] = orig - options.step;
    const Eval minus = evaluate(loss);
    data[flat] = orig;
    if (plus.kinks != minus.kinks) {
      ++res.skipped;
      if (++skips_in_row > options.max_skips) {
        throw DegenerateInputError("gradcheck " + name + ": every sampled coordinate straddles a kink");
      }
      continue;
    }
    skips_in_row = 0;
    const double numeric = (plus.value - minus.value) / (2.0 * options.step);
    const double a = analytic[which][flat];
    const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
    if (res.checked == 0 || err > res.max_rel_err) {
      res.max_rel_err = err;
      res.worst_param = params[which].name;
      res.worst_index = flat;
      res.worst_analytic = a;
      res.worst_numeric = numeric;
    }
    ++res.checked;
  }
  res.passed = res.max_rel_err < options.tolerance;
  return res;
}

namespace {

Tensor normal_leaf(Shape shape, Rng& rng, bool requires_grad) {
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = rng.normal();
  return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

io::LabelVolume random_labels(std::size_t size, std::size_t classes, Rng& rng) {
  std::vector<std::int32_t> ids(size * size * size);
  for (auto& x : ids) x = static_cast<std::int32_t>(rng.below(classes));
  return io::LabelVolume::exclusive({size, size, size}, classes - 1, std::move(ids));
}

void add_adapter(std::vector<NamedTensor>& out, const std::optional<distill::AdapterParams>& a, std::size_t l) {
  if (!a) return;
  out.push_back({"adapter" + std::to_string(l) + ".weight", a->weight});
  out.push_back({"adapter" + std::to_string(l) + ".bias", a->bias});
}

void add_gc(std::vector<NamedTensor>& out, const distill::GCBlockParams& g, std::size_t l) {
  for (const auto& [n, t] : g.named()) out.push_back({"gc" + std::to_string(l) + "." + n, t});
}

}  // namespace

std::vector<CheckResult> run_suite(const SuiteConfig& cfg) {
  if (cfg.size < 2 || cfg.size % 2) throw InvalidArgumentError("gradcheck toy size must be even and >= 2");
  Rng rng(cfg.seed, 11);
  const std::size_t ct = cfg.channels, cs = std::max<std::size_t>(1, cfg.channels / 2);
  const std::size_t s0 = cfg.size, s1 = cfg.size / 2;
  const double temperature = 0.5;
  const auto labels = random_labels(s0, cfg.classes, rng);

  std::vector<Tensor> teacher{normal_leaf({ct, s0, s0, s0}, rng, false), normal_leaf({ct, s1, s1, s1}, rng, false)};
  std::vector<Tensor> student{normal_leaf({cs, s0, s0, s0}, rng, true), normal_leaf({cs, s1, s1, s1}, rng, true)};
  std::vector<std::optional<distill::AdapterParams>> adapters;
  if (cs != ct) {
    adapters = {distill::AdapterParams::create(cs, ct, rng), distill::AdapterParams::create(cs, ct, rng)};
  } else {
    adapters = {std::nullopt, std::nullopt};
  }
  std::vector<masks::MaskBundle> bundles{
      masks::build_stage_masks(labels, teacher[0], temperature),
      masks::build_stage_masks(io::downsample_labels(labels, {s1, s1, s1}), teacher[1], temperature)};
  std::vector<distill::GCBlockParams> gc{distill::GCBlockParams::create(ct, 4, rng, false),
                                         distill::GCBlockParams::create(ct, 4, rng, false)};

  distill::DistillConfig dc;
  dc.temperature = temperature;
  dc.stages = {0, 1};
  dc.ca_stages = {0, 1};

  std::vector<NamedTensor> stage0{{"student0", student[0]}};
  add_adapter(stage0, adapters[0], 0);
  std::vector<NamedTensor> both = stage0;
  both.push_back({"student1", student[1]});
  add_adapter(both, adapters[1], 1);
  std::vector<NamedTensor> with_gc = both;
  add_gc(with_gc, gc[0], 0);
  add_gc(with_gc, gc[1], 1);

  std::vector<CheckResult> out;
  out.push_back(check("L_feat", [&] { return distill::loss_feat(teacher[0], student[0], adapters[0]); }, stage0, rng,
                      cfg.options));
  out.push_back(check(
      "L_ac",
      [&] {
        auto sm = masks::build_activation_masks(distill::apply_adapter(adapters[0], student[0]), temperature);
        return distill::loss_ac(bundles[0].activation, sm, 1.0);
      },
      stage0, rng, cfg.options));
  out.push_back(check("L_sard", [&] { return distill::loss_sard(teacher[0], student[0], adapters[0], bundles[0]); },
                      stage0, rng, cfg.options));
  auto stage_features = [&] {
    return std::vector<distill::StageFeatures>{{teacher[0], student[0]}, {teacher[1], student[1]}};
  };
  out.push_back(check(
      "L_ms_sard", [&] { return distill::loss_ms_sard(stage_features(), adapters, bundles, dc).total; }, both, rng,
      cfg.options));
  out.push_back(check(
      "L_ms_ca", [&] { return distill::loss_ms_ca(stage_features(), adapters, gc, 1.0, {0, 1}); }, with_gc, rng,
      cfg.options));

  const auto labels_b = random_labels(s0, cfg.classes, rng);
  Tensor logits = normal_leaf({2, cfg.classes, s0, s0, s0}, rng, true);
  out.push_back(check(
      "L_task", [&] { return distill::loss_task(logits, {&labels, &labels_b}).total; }, {{"logits", logits}}, rng,
      cfg.options));

  // Full objective through a two-stage student network.
  models::NetworkPlan tplan;
  tplan.stage_channels = {ct, ct};
  tplan.strides = {1, 2};
  tplan.num_classes = cfg.classes;
  tplan.init_seed = cfg.seed;
  const auto splan = models::derive_student_plan(tplan, 1, 1);
  const auto tnet = models::build_network(tplan);
  auto snet = models::build_network(splan);
  snet.set_mode(models::Mode::train);
  const Tensor x = normal_leaf({1, 1, s0, s0, s0}, rng, false);
  const auto tf = models::forward_with_taps(tnet, x, true);
  std::vector<Tensor> tfeat{select(tf.stage_features[0], 0), select(tf.stage_features[1], 0)};
  std::vector<masks::MaskBundle> nb{
      masks::build_stage_masks(labels, tfeat[0], temperature),
      masks::build_stage_masks(io::downsample_labels(labels, {s1, s1, s1}), tfeat[1], temperature)};
  std::vector<NamedTensor> net_params;
  for (const auto& p : snet.params) net_params.push_back({"student." + p.name, p.value});
  for (std::size_t l = 0; l < 2; ++l) add_adapter(net_params, adapters[l], l);
  add_gc(net_params, gc[0], 0);
  add_gc(net_params, gc[1], 1);
  out.push_back(check(
      "L_total",
      [&] {
        const auto fr = models::forward_with_taps(snet, x);
        std::vector<distill::StageFeatures> sf{{tfeat[0], select(fr.stage_features[0], 0)},
                                               {tfeat[1], select(fr.stage_features[1], 0)}};
        const auto sard = distill::loss_ms_sard(sf, adapters, nb, dc).total;
        const auto ca = distill::loss_ms_ca(sf, adapters, gc, 1.0, {0, 1});
        return distill::loss_total(distill::loss_task(fr.logits, labels).total, sard, ca);
      },
      net_params, rng, cfg.options));
  return out;
}

}  // namespace recokd::gradcheck
