// Copyright (c) 2026, The ReCo-KD Authors
// SPDX-License-Identifier: Apache-2.0

#include "recokd/network.hpp"

#include <bit>
#include <cmath>
#include <numeric>
#include <set>
#include <unordered_map>

#include "recokd/hash.hpp"
#include "recokd/nifti.hpp"
#include "recokd/ops.hpp"
#include "recokd/rng.hpp"

namespace recokd::models {

using nlohmann::json;

std::size_t NetworkPlan::total_stride() const {
  std::size_t p = 1;
  for (auto s : strides) p *= s;
  return p;
}

void NetworkPlan::validate() const {
  if (stage_channels.empty()) throw ValidationError("plan.stage_channels", "needs at least one stage");
  for (std::size_t i = 0; i < stage_channels.size(); ++i) {
    if (stage_channels[i] == 0) throw ValidationError("plan.stage_channels[" + std::to_string(i) + "]", "must be >= 1");
  }
  if (strides.size() != stage_channels.size()) {
    throw ValidationError("plan.strides", "expected " + std::to_string(stage_channels.size()) + " entries, got " +
                                              std::to_string(strides.size()));
  }
  if (strides[0] != 1) throw ValidationError("plan.strides[0]", "stage 0 does not downsample; must be 1");
  for (std::size_t i = 1; i < strides.size(); ++i) {
    if (strides[i] == 0) throw ValidationError("plan.strides[" + std::to_string(i) + "]", "must be >= 1");
  }
  if (width_factor > 3) throw ValidationError("plan.width_factor", "must be in 0..3");
  if (c_min == 0) throw ValidationError("plan.c_min", "must be >= 1");
  if (in_channels == 0) throw ValidationError("plan.in_channels", "must be >= 1");
  if (num_classes < 2) throw ValidationError("plan.num_classes", "needs background plus at least one class");
  if (convs_per_stage == 0) throw ValidationError("plan.convs_per_stage", "must be >= 1");
}

bool NetworkPlan::same_topology(const NetworkPlan& other) const {
  return stage_channels.size() == other.stage_channels.size() && residual_encoder == other.residual_encoder &&
         in_channels == other.in_channels && num_classes == other.num_classes &&
         convs_per_stage == other.convs_per_stage && strides == other.strides;
}

void to_json(json& j, const NetworkPlan& p) {
  j = json{{"stage_channels", p.stage_channels},     {"width_factor", p.width_factor},
           {"c_min", p.c_min},                       {"residual_encoder", p.residual_encoder},
           {"in_channels", p.in_channels},           {"num_classes", p.num_classes},
           {"convs_per_stage", p.convs_per_stage},   {"strides", p.strides},
           {"init_seed", p.init_seed}};
}

namespace {

template <class T>
void read_field(const json& j, const std::string& prefix, const char* key, T& out) {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    out = it->get<T>();
  } catch (const json::exception& e) {
    throw ValidationError(prefix + key, std::string("wrong type: ") + e.what());
  }
}

}  // namespace

void from_json(const json& j, NetworkPlan& p) {
  if (!j.is_object()) throw ValidationError("plan", "must be an object");
  static const std::set<std::string> known{"stage_channels", "width_factor",    "c_min",   "residual_encoder",
                                           "in_channels",    "num_classes",     "strides", "convs_per_stage",
                                           "init_seed"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!known.count(it.key())) throw ValidationError("plan." + it.key(), "unknown key");
  }
  const std::string pre = "plan.";
  read_field(j, pre, "stage_channels", p.stage_channels);
  read_field(j, pre, "width_factor", p.width_factor);
  read_field(j, pre, "c_min", p.c_min);
  read_field(j, pre, "residual_encoder", p.residual_encoder);
  read_field(j, pre, "in_channels", p.in_channels);
  read_field(j, pre, "num_classes", p.num_classes);
  read_field(j, pre, "convs_per_stage", p.convs_per_stage);
  read_field(j, pre, "strides", p.strides);
  read_field(j, pre, "init_seed", p.init_seed);
}

NetworkPlan derive_student_plan(const NetworkPlan& teacher, std::size_t t, std::size_t c_min) {
  if (t > 3) throw InvalidArgumentError("width factor t must be in 0..3, got " + std::to_string(t));
  NetworkPlan s = teacher;
  s.c_min = c_min;
  s.width_factor = t;
  for (auto& c : s.stage_channels) c = std::max(c_min, c >> t);
  return s;
}

std::size_t norm_groups(std::size_t channels) { return std::gcd(channels, std::size_t{4}); }

// ---------------------------------------------------------------------------
// One architecture description shared by building, counting and running.

namespace {

template <class I>
typename I::Value architecture(const NetworkPlan& p, I& it, typename I::Value x, std::vector<typename I::Value>* taps,
                               bool encoder_only) {
  using V = typename I::Value;
  std::vector<V> skips;
  std::size_t in = p.in_channels;
  for (std::size_t i = 0; i < p.num_stages(); ++i) {
    const std::size_t c = p.stage_channels[i];
    const std::string pre = "enc" + std::to_string(i);
    if (i > 0) {
      x = it.conv(pre + ".down", x, in, c, 3, p.strides[i], 1);
      x = it.relu(it.norm(pre + ".down_norm", x, c));
      in = c;
    }
    for (std::size_t b = 0; b < p.convs_per_stage; ++b) {
      const std::string bp = pre + ".block" + std::to_string(b);
      if (p.residual_encoder) {
        V h = it.conv(bp + ".conv1", x, in, c, 3, 1, 1);
        h = it.relu(it.norm(bp + ".norm1", h, c));
        h = it.conv(bp + ".conv2", h, c, c, 3, 1, 1);
        h = it.norm(bp + ".norm2", h, c);
        V shortcut = in == c ? x : it.conv(bp + ".proj", x, in, c, 1, 1, 0);
        x = it.relu(it.add(h, shortcut));
      } else {
        x = it.conv(bp + ".conv", x, in, c, 3, 1, 1);
        x = it.relu(it.norm(bp + ".norm", x, c));
      }
      in = c;
    }
    if (taps) taps->push_back(x);
    skips.push_back(x);
  }
  if (encoder_only) return x;
  for (std::size_t k = p.num_stages() - 1; k-- > 0;) {
    const std::size_t c = p.stage_channels[k];
    const std::string pre = "dec" + std::to_string(k);
    x = it.upconv(pre + ".up", x, p.stage_channels[k + 1], c, p.strides[k + 1]);
    x = it.relu(it.norm(pre + ".up_norm", x, c));
    x = it.concat(x, skips[k]);
    x = it.conv(pre + ".conv", x, 2 * c, c, 3, 1, 1);
    x = it.relu(it.norm(pre + ".norm", x, c));
  }
  return it.conv("head", x, p.stage_channels[0], p.num_classes, 1, 1, 0);
}

struct ParamSpec {
  std::string name;
  Shape shape;
  enum Kind { weight, bias, gain } kind;
  std::size_t fan_in = 0;
};

// Shape-only interpreter: records parameters and counts FLOPs.
struct ShapeInterp {
  struct Value {
    std::size_t c = 0;
    io::Dims3 s;
    std::size_t elems() const { return c * s.voxels(); }
  };
  std::vector<ParamSpec> specs;
  std::uint64_t flops = 0;

  static std::size_t out_dim(std::size_t n, std::size_t k, std::size_t stride, std::size_t pad) {
    if (n + 2 * pad < k) throw GeometryError("conv kernel larger than padded input");
    return (n + 2 * pad - k) / stride + 1;
  }
  void conv_params(const std::string& name, std::size_t in, std::size_t out, std::size_t k) {
    specs.push_back({name + ".weight", {out, in, k, k, k}, ParamSpec::weight, in * k * k * k});
    specs.push_back({name + ".bias", {out}, ParamSpec::bias, 0});
  }
  Value conv(const std::string& name, Value x, std::size_t in, std::size_t out, std::size_t k, std::size_t stride,
             std::size_t pad) {
    if (x.c != in) throw ShapeError(name + ": expected " + std::to_string(in) + " channels, got " + std::to_string(x.c));
    conv_params(name, in, out, k);
    Value y{out, {out_dim(x.s.d, k, stride, pad), out_dim(x.s.h, k, stride, pad), out_dim(x.s.w, k, stride, pad)}};
    flops += 2ull * out * in * k * k * k * y.s.voxels();
    return y;
  }
  Value upconv(const std::string& name, Value x, std::size_t in, std::size_t out, std::size_t factor) {
    Value up{x.c, {x.s.d * factor, x.s.h * factor, x.s.w * factor}};
    return conv(name, up, in, out, 3, 1, 1);
  }
  Value norm(const std::string& name, Value x, std::size_t c) {
    specs.push_back({name + ".gain", {c}, ParamSpec::gain, 0});
    specs.push_back({name + ".bias", {c}, ParamSpec::bias, 0});
    flops += x.elems();
    return x;
  }
  Value relu(Value x) {
    flops += x.elems();
    return x;
  }
  Value add(Value a, Value b) {
    if (a.c != b.c || !(a.s == b.s)) throw ShapeError("residual add shape mismatch");
    flops += a.elems();
    return a;
  }
  Value concat(Value a, Value b) {
    if (!(a.s == b.s)) throw ShapeError("skip connection spatial mismatch " + a.s.str() + " vs " + b.s.str());
    return {a.c + b.c, a.s};
  }
};

// Tensor interpreter: consumes parameters in declaration order.
struct ExecInterp {
  using Value = Tensor;
  const NetworkState& net;
  std::size_t cursor = 0;

  const Tensor& take(const std::string& name) {
    if (cursor >= net.params.size() || net.params[cursor].name != name) {
      throw ShapeError("parameter list does not match the plan at '" + name + "'");
    }
    return net.params[cursor++].value;
  }
  Tensor conv(const std::string& name, const Tensor& x, std::size_t, std::size_t, std::size_t, std::size_t stride,
              std::size_t pad) {
    const Tensor& w = take(name + ".weight");
    const Tensor& b = take(name + ".bias");
    return conv3d(x, w, b, {stride, stride, stride}, {pad, pad, pad});
  }
  Tensor upconv(const std::string& name, const Tensor& x, std::size_t, std::size_t, std::size_t factor) {
    const Tensor& w = take(name + ".weight");
    const Tensor& b = take(name + ".bias");
    return upsample_conv3d(x, {factor, factor, factor}, w, b);
  }
  Tensor norm(const std::string& name, const Tensor& x, std::size_t c) {
    const Tensor& g = take(name + ".gain");
    const Tensor& b = take(name + ".bias");
    return group_norm(x, norm_groups(c), g, b);
  }
  Tensor relu(const Tensor& x) { return recokd::relu(x); }
  Tensor add(const Tensor& a, const Tensor& b) { return recokd::add(a, b); }
  Tensor concat(const Tensor& a, const Tensor& b) { return recokd::concat({a, b}, 1); }
};

std::vector<ParamSpec> param_specs(const NetworkPlan& plan) {
  ShapeInterp it;
  const std::size_t s = plan.total_stride();
  architecture(plan, it, ShapeInterp::Value{plan.in_channels, {s, s, s}}, nullptr, false);
  return it.specs;
}

void check_divisible(const NetworkPlan& plan, io::Dims3 s) {
  const std::size_t t = plan.total_stride();
  if (s.d % t || s.h % t || s.w % t || s.voxels() == 0) {
    throw GeometryError("spatial dims " + s.str() + " must be positive multiples of the total stride " +
                        std::to_string(t));
  }
}

void append_le(std::vector<std::uint8_t>& out, double v) {
  auto bits = std::bit_cast<std::uint64_t>(v);
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<std::uint8_t>(bits >> (8 * b)));
}

double read_le(const std::uint8_t* p) {
  std::uint64_t bits = 0;
  for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(p[b]) << (8 * b);
  return std::bit_cast<double>(bits);
}

std::vector<std::uint8_t> param_blob(const NetworkState& net) {
  std::vector<std::uint8_t> out;
  out.reserve(8 * net.num_parameters());
  for (const auto& p : net.params) {
    for (double v : p.value.data()) append_le(out, v);
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------

const Tensor& NetworkState::param(const std::string& name) const {
  for (const auto& p : params) {
    if (p.name == name) return p.value;
  }
  throw InvalidArgumentError("no parameter named '" + name + "'");
}

std::vector<Tensor> NetworkState::tensors() const {
  std::vector<Tensor> out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back(p.value);
  return out;
}

std::size_t NetworkState::num_parameters() const {
  std::size_t n = 0;
  for (const auto& p : params) n += p.value.numel();
  return n;
}

std::vector<std::pair<std::string, Shape>> NetworkState::signature() const {
  std::vector<std::pair<std::string, Shape>> out;
  for (const auto& p : params) out.emplace_back(p.name, p.value.shape());
  return out;
}

std::string NetworkState::hash() const { return sha256_hex(param_blob(*this)); }

NetworkState NetworkState::clone() const {
  NetworkState c;
  c.plan = plan;
  c.mode = mode;
  for (const auto& p : params) {
    const auto d = p.value.data();
    c.params.push_back(
        {p.name, Tensor::from(p.value.shape(), std::vector<double>(d.begin(), d.end()), mode == Mode::train)});
  }
  return c;
}

void NetworkState::set_mode(Mode m) {
  mode = m;
  for (auto& p : params) p.value.set_requires_grad(m == Mode::train);
}

NetworkState build_network(const NetworkPlan& plan) {
  plan.validate();
  NetworkState net;
  net.plan = plan;
  Rng rng(plan.init_seed, 1);
  for (const auto& spec : param_specs(plan)) {
    std::vector<double> v(numel(spec.shape), 0.0);
    if (spec.kind == ParamSpec::weight) {
      const double bound = std::sqrt(6.0 / static_cast<double>(spec.fan_in));
      for (auto& x : v) x = rng.uniform(-bound, bound);
    } else if (spec.kind == ParamSpec::gain) {
      std::fill(v.begin(), v.end(), 1.0);
    }
    net.params.push_back({spec.name, Tensor::from(spec.shape, std::move(v))});
  }
  return net;
}

ForwardResult forward_with_taps(const NetworkState& net, const Tensor& x, bool encoder_only) {
  const auto& p = net.plan;
  if (x.dim() != 5 || x.shape()[1] != p.in_channels) {
    throw ShapeError("network input must be [N, " + std::to_string(p.in_channels) + ", D, H, W], got " +
                     to_string(x.shape()));
  }
  check_divisible(p, {x.shape()[2], x.shape()[3], x.shape()[4]});
  ExecInterp it{net};
  ForwardResult r;
  Tensor out = architecture(p, it, x, &r.stage_features, encoder_only);
  if (!encoder_only) {
    if (it.cursor != net.params.size()) throw ShapeError("network has parameters the plan does not use");
    r.logits = out;
  }
  return r;
}

Tensor make_batch(const std::vector<const io::ImageVolume*>& images) {
  if (images.empty()) throw InvalidArgumentError("empty batch");
  const auto& first = *images.front();
  std::vector<double> data;
  data.reserve(images.size() * first.data.size());
  for (const auto* img : images) {
    if (img->shape != first.shape || img->modalities != first.modalities) {
      throw ShapeError("batch volumes differ: " + img->shape.str() + " vs " + first.shape.str());
    }
    data.insert(data.end(), img->data.begin(), img->data.end());
  }
  return Tensor::from({images.size(), first.modalities, first.shape.d, first.shape.h, first.shape.w}, std::move(data));
}

Complexity count_params_flops(const NetworkPlan& plan, io::Dims3 input) {
  plan.validate();
  check_divisible(plan, input);
  ShapeInterp it;
  architecture(plan, it, ShapeInterp::Value{plan.in_channels, input}, nullptr, false);
  Complexity c;
  for (const auto& s : it.specs) c.params += numel(s.shape);
  c.flops = it.flops;
  return c;
}

// ---------------------------------------------------------------------------
// Checkpoints

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto blob = param_blob(ckpt.state);
  json params = json::array();
  std::size_t offset = 0;
  for (const auto& p : ckpt.state.params) {
    params.push_back({{"name", p.name}, {"shape", p.value.shape()}, {"offset", offset}});
    offset += p.value.numel();
  }
  json m{{"format", "reco_kd.checkpoint.v1"},
         {"plan", ckpt.state.plan},
         {"mode", ckpt.state.mode == Mode::train ? "train" : "infer"},
         {"params", params},
         {"rng_state", ckpt.rng_state},
         {"step", ckpt.step},
         {"blob", "params.bin"},
         {"blob_sha256", sha256_hex(blob)},
         {"extra", ckpt.extra}};
  io::write_file_bytes(dir / "params.bin", blob);
  const std::string text = m.dump(2) + "\n";
  io::write_file_bytes(dir / "manifest.json", std::vector<std::uint8_t>(text.begin(), text.end()));
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  const auto text = io::read_file_bytes(dir / "manifest.json");
  json m;
  try {
    m = json::parse(text.begin(), text.end());
  } catch (const json::exception& e) {
    throw Error("checkpoint manifest " + (dir / "manifest.json").string() + ": " + e.what());
  }
  if (m.value("format", "") != "reco_kd.checkpoint.v1") throw Error("unsupported checkpoint format in " + dir.string());
  Checkpoint c;
  c.state.plan = m.at("plan").get<NetworkPlan>();
  c.state.plan.validate();
  c.rng_state = m.at("rng_state").get<std::array<std::uint64_t, 4>>();
  c.step = m.at("step").get<std::uint64_t>();
  if (m.contains("extra")) c.extra = m.at("extra");
  const auto blob = io::read_file_bytes(dir / m.at("blob").get<std::string>());
  if (sha256_hex(blob) != m.at("blob_sha256").get<std::string>()) {
    throw Error("checkpoint blob hash mismatch in " + dir.string());
  }
  const auto specs = param_specs(c.state.plan);
  const auto& entries = m.at("params");
  if (entries.size() != specs.size()) {
    throw ShapeError("checkpoint has " + std::to_string(entries.size()) + " tensors, plan expects " +
                     std::to_string(specs.size()));
  }
  std::size_t offset = 0;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const auto name = entries[i].at("name").get<std::string>();
    const auto shape = entries[i].at("shape").get<Shape>();
    if (name != specs[i].name || shape != specs[i].shape) {
      throw ShapeError("checkpoint tensor " + name + " " + to_string(shape) + " does not match plan tensor " +
                       specs[i].name + " " + to_string(specs[i].shape));
    }
    const std::size_t n = numel(shape);
    if ((offset + n) * 8 > blob.size()) throw Error("checkpoint blob truncated at " + name);
    std::vector<double> v(n);
    for (std::size_t k = 0; k < n; ++k) v[k] = read_le(blob.data() + 8 * (offset + k));
    offset += n;
    c.state.params.push_back({name, Tensor::from(shape, std::move(v))});
  }
  if (offset * 8 != blob.size()) throw Error("checkpoint blob has trailing bytes");
  c.state.set_mode(m.value("mode", "infer") == "train" ? Mode::train : Mode::infer);
  return c;
}

}  // namespace recokd::models
