// Copyright (c) 2026, The ReCo-KD Authors
// SPDX-License-Identifier: Apache-2.0

#include "recokd/config.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "recokd/rng.hpp"

namespace recokd::config {

namespace {

// Strict object reader: every key must be consumed by exactly one getter.
class Obj {
 public:
  Obj(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j.is_object()) throw ValidationError(path_, "must be an object");
  }

  const json* find(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }
  std::string at(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ValidationError(at(it.key().c_str()), "unknown key");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

std::uint64_t as_uint(const json& v, const std::string& path) {
  if (!v.is_number_unsigned()) throw ValidationError(path, "must be a non-negative integer");
  return v.get<std::uint64_t>();
}

double as_double(const json& v, const std::string& path) {
  if (!v.is_number()) throw ValidationError(path, "must be a number");
  return v.get<double>();
}

bool as_bool(const json& v, const std::string& path) {
  if (!v.is_boolean()) throw ValidationError(path, "must be a boolean");
  return v.get<bool>();
}

std::string as_string(const json& v, const std::string& path) {
  if (!v.is_string()) throw ValidationError(path, "must be a string");
  return v.get<std::string>();
}

std::vector<std::size_t> as_uint_list(const json& v, const std::string& path) {
  if (!v.is_array()) throw ValidationError(path, "must be an array");
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < v.size(); ++i) out.push_back(as_uint(v[i], path + "[" + std::to_string(i) + "]"));
  return out;
}

io::Dims3 as_dims(const json& v, const std::string& path) {
  auto l = as_uint_list(v, path);
  if (l.size() != 3) throw ValidationError(path, "must have three entries [d, h, w]");
  for (auto x : l) {
    if (x == 0) throw ValidationError(path, "entries must be >= 1");
  }
  return {l[0], l[1], l[2]};
}

json dims_json(io::Dims3 d) { return json::array({d.d, d.h, d.w}); }

template <class T, class F>
void opt(Obj& o, const char* key, T& out, F convert) {
  if (const json* v = o.find(key)) out = convert(*v, o.at(key));
}

void require(bool ok, const std::string& path, const std::string& msg) {
  if (!ok) throw ValidationError(path, msg);
}

DataConfig data_from_json(const json& j, const std::string& path) {
  DataConfig d;
  Obj o(j, path);
  opt(o, "seed", d.seed, as_uint);
  opt(o, "num_cases", d.num_cases, as_uint);
  opt(o, "shape", d.shape, as_dims);
  opt(o, "noise_sigma", d.noise_sigma, as_double);
  opt(o, "modalities", d.modalities, as_uint);
  if (const json* v = o.find("classes")) {
    const std::string cp = o.at("classes");
    require(v->is_array() && !v->empty(), cp, "must be a non-empty array");
    d.classes.clear();
    for (std::size_t i = 0; i < v->size(); ++i) {
      const std::string ep = cp + "[" + std::to_string(i) + "]";
      Obj c((*v)[i], ep);
      io::ClassSpec spec;
      opt(c, "fraction", spec.target_fraction, as_double);
      if (const json* k = c.find("shape")) {
        try {
          spec.kind = io::parse_shape_kind(as_string(*k, c.at("shape")));
        } catch (const InvalidArgumentError& e) {
          throw ValidationError(c.at("shape"), e.what());
        }
      }
      c.finish();
      require(spec.target_fraction > 0.0 && spec.target_fraction < 1.0, ep + ".fraction", "must be in (0, 1)");
      d.classes.push_back(spec);
    }
  }
  o.finish();
  require(d.num_cases >= 1, o.at("num_cases"), "must be >= 1");
  require(d.noise_sigma >= 0.0, o.at("noise_sigma"), "must be >= 0");
  require(d.modalities >= 1, o.at("modalities"), "must be >= 1");
  double total = 0.0;
  for (const auto& c : d.classes) total += c.target_fraction;
  require(total < 1.0, o.at("classes"), "foreground fractions must sum to < 1");
  return d;
}

train::TrainConfig train_from_json(const json& j, const std::string& path) {
  train::TrainConfig t;
  Obj o(j, path);
  opt(o, "epochs", t.epochs, as_uint);
  opt(o, "batch_size", t.batch_size, as_uint);
  opt(o, "lr0", t.lr0, as_double);
  opt(o, "momentum", t.momentum, as_double);
  opt(o, "weight_decay", t.weight_decay, as_double);
  opt(o, "poly_exponent", t.poly_exponent, as_double);
  opt(o, "grad_clip", t.grad_clip, as_double);
  opt(o, "seed", t.seed, as_uint);
  if (const json* v = o.find("patch_size")) {
    if (v->is_null()) {
      t.patch_size.reset();
    } else {
      t.patch_size = as_dims(*v, o.at("patch_size"));
    }
  }
  opt(o, "checkpoint_every", t.checkpoint_every, as_uint);
  opt(o, "val_fraction", t.val_fraction, as_double);
  o.finish();
  require(t.epochs >= 1, o.at("epochs"), "must be >= 1");
  require(t.batch_size >= 1, o.at("batch_size"), "must be >= 1");
  require(t.lr0 >= 0.0, o.at("lr0"), "must be >= 0");
  require(t.momentum >= 0.0 && t.momentum < 1.0, o.at("momentum"), "must be in [0, 1)");
  require(t.weight_decay >= 0.0, o.at("weight_decay"), "must be >= 0");
  require(t.poly_exponent >= 0.0, o.at("poly_exponent"), "must be >= 0");
  require(t.grad_clip >= 0.0, o.at("grad_clip"), "must be >= 0");
  require(t.val_fraction >= 0.0 && t.val_fraction < 1.0, o.at("val_fraction"), "must be in [0, 1)");
  return t;
}

GradcheckConfig gradcheck_from_json(const json& j, const std::string& path) {
  GradcheckConfig g;
  Obj o(j, path);
  opt(o, "seed", g.seed, as_uint);
  opt(o, "channels", g.channels, as_uint);
  opt(o, "size", g.size, as_uint);
  opt(o, "classes", g.classes, as_uint);
  opt(o, "coords_per_loss", g.coords_per_loss, as_uint);
  opt(o, "step", g.step, as_double);
  opt(o, "tolerance", g.tolerance, as_double);
  o.finish();
  require(g.channels >= 1, o.at("channels"), "must be >= 1");
  require(g.size >= 2, o.at("size"), "must be >= 2");
  require(g.classes >= 2, o.at("classes"), "must be >= 2");
  require(g.coords_per_loss >= 1, o.at("coords_per_loss"), "must be >= 1");
  require(g.step > 0.0, o.at("step"), "must be > 0");
  require(g.tolerance > 0.0, o.at("tolerance"), "must be > 0");
  return g;
}

json plan_json(const models::NetworkPlan& p) {
  json j;
  models::to_json(j, p);
  return j;
}

}  // namespace

// ---------------------------------------------------------------------------

json distill_to_json(const distill::DistillConfig& c) {
  return json{{"temperature", c.temperature}, {"gamma", c.gamma},         {"lambda", c.lambda}, {"sard_weight", c.sard_weight},
              {"stages", c.stages},           {"ca_stages", c.ca_stages}, {"sard_fg", c.sard_fg},
              {"sard_bg", c.sard_bg},         {"mask_align", c.mask_align}, {"msca", c.msca},
              {"sard_split", c.sard_split},   {"gc_ratio", c.gc_ratio}};
}

distill::DistillConfig distill_from_json(const json& j, const std::string& path) {
  distill::DistillConfig c;
  Obj o(j, path);
  opt(o, "temperature", c.temperature, as_double);
  opt(o, "gamma", c.gamma, as_double);
  opt(o, "lambda", c.lambda, as_double);
  opt(o, "sard_weight", c.sard_weight, as_double);
  opt(o, "stages", c.stages, as_uint_list);
  opt(o, "ca_stages", c.ca_stages, as_uint_list);
  opt(o, "sard_fg", c.sard_fg, as_bool);
  opt(o, "sard_bg", c.sard_bg, as_bool);
  opt(o, "mask_align", c.mask_align, as_bool);
  opt(o, "msca", c.msca, as_bool);
  opt(o, "sard_split", c.sard_split, as_bool);
  opt(o, "gc_ratio", c.gc_ratio, as_uint);
  o.finish();
  require(c.temperature > 0.0, o.at("temperature"), "must be > 0");
  require(c.gamma >= 0.0, o.at("gamma"), "must be >= 0");
  require(c.lambda >= 0.0, o.at("lambda"), "must be >= 0");
  require(c.sard_weight >= 0.0, o.at("sard_weight"), "must be >= 0");
  require(c.gc_ratio >= 1, o.at("gc_ratio"), "must be >= 1");
  return c;
}

json train_to_json(const train::TrainConfig& t) {
  return json{{"epochs", t.epochs},
              {"batch_size", t.batch_size},
              {"lr0", t.lr0},
              {"momentum", t.momentum},
              {"weight_decay", t.weight_decay},
              {"poly_exponent", t.poly_exponent},
              {"grad_clip", t.grad_clip},
              {"seed", t.seed},
              {"patch_size", t.patch_size ? dims_json(*t.patch_size) : json(nullptr)},
              {"checkpoint_every", t.checkpoint_every},
              {"val_fraction", t.val_fraction}};
}

json data_to_json(const DataConfig& d) {
  json classes = json::array();
  for (const auto& c : d.classes) classes.push_back({{"fraction", c.target_fraction}, {"shape", io::to_string(c.kind)}});
  return json{{"seed", d.seed},
              {"num_cases", d.num_cases},
              {"shape", dims_json(d.shape)},
              {"noise_sigma", d.noise_sigma},
              {"modalities", d.modalities},
              {"classes", classes}};
}

json to_json(const RunConfig& c) {
  json ablation = json::array();
  for (const auto& e : c.ablation) ablation.push_back({{"name", e.name}, {"distill", distill_to_json(e.config)}});
  const auto& g = c.gradcheck;
  return json{{"data", data_to_json(c.data)},
              {"eval_data", data_to_json(c.eval_data)},
              {"data_dir", c.data_dir},
              {"eval_dir", c.eval_dir},
              {"teacher_plan", plan_json(c.teacher_plan)},
              {"width_factor", c.width_factor},
              {"c_min", c.c_min},
              {"train", train_to_json(c.train)},
              {"distill", distill_to_json(c.distill)},
              {"teacher_checkpoint", c.teacher_checkpoint},
              {"checkpoint", c.checkpoint},
              {"ablation", ablation},
              {"gradcheck",
               {{"seed", g.seed},
                {"channels", g.channels},
                {"size", g.size},
                {"classes", g.classes},
                {"coords_per_loss", g.coords_per_loss},
                {"step", g.step},
                {"tolerance", g.tolerance}}}};
}

RunConfig from_json(const json& j) {
  RunConfig c;
  Obj o(j, "");
  if (const json* v = o.find("data")) c.data = data_from_json(*v, "data");
  if (const json* v = o.find("eval_data")) c.eval_data = data_from_json(*v, "eval_data");
  opt(o, "data_dir", c.data_dir, as_string);
  opt(o, "eval_dir", c.eval_dir, as_string);
  if (const json* v = o.find("teacher_plan")) {
    c.teacher_plan = {};
    try {
      models::from_json(*v, c.teacher_plan);
    } catch (const ValidationError& e) {
      // Plan errors are reported as plan.<key>; re-root them.
      const std::string f = e.field();
      throw ValidationError("teacher_plan" + f.substr(std::min<std::size_t>(f.size(), 4)),
                            std::string(e.what()).substr(f.size() + 2));
    }
  }
  opt(o, "width_factor", c.width_factor, as_uint);
  opt(o, "c_min", c.c_min, as_uint);
  if (const json* v = o.find("train")) c.train = train_from_json(*v, "train");
  if (const json* v = o.find("distill")) c.distill = distill_from_json(*v, "distill");
  opt(o, "teacher_checkpoint", c.teacher_checkpoint, as_string);
  opt(o, "checkpoint", c.checkpoint, as_string);
  if (const json* v = o.find("ablation")) {
    require(v->is_array(), "ablation", "must be an array");
    for (std::size_t i = 0; i < v->size(); ++i) {
      const std::string ep = "ablation[" + std::to_string(i) + "]";
      Obj e((*v)[i], ep);
      train::AblationEntry entry;
      opt(e, "name", entry.name, as_string);
      if (const json* d = e.find("distill")) entry.config = distill_from_json(*d, ep + ".distill");
      e.finish();
      require(!entry.name.empty(), ep + ".name", "must be a non-empty string");
      c.ablation.push_back(std::move(entry));
    }
  }
  if (const json* v = o.find("gradcheck")) c.gradcheck = gradcheck_from_json(*v, "gradcheck");
  o.finish();
  c.validate();
  return c;
}

void RunConfig::validate() const {
  try {
    teacher_plan.validate();
  } catch (const ValidationError& e) {
    const std::string f = e.field();
    throw ValidationError("teacher_plan" + f.substr(std::min<std::size_t>(f.size(), 4)),
                          std::string(e.what()).substr(f.size() + 2));
  }
  require(teacher_plan.width_factor == 0, "teacher_plan.width_factor", "the teacher is a full-width (t = 0) plan");
  require(width_factor <= 3, "width_factor", "must be in 0..3");
  require(c_min >= 1, "c_min", "must be >= 1");
  if (data_dir.empty()) {
    require(data.classes.size() + 1 == teacher_plan.num_classes, "data.classes",
            "has " + std::to_string(data.classes.size()) + " foreground classes but teacher_plan.num_classes is " +
                std::to_string(teacher_plan.num_classes));
    require(data.modalities == teacher_plan.in_channels, "data.modalities", "must equal teacher_plan.in_channels");
    const std::size_t s = teacher_plan.total_stride();
    require(data.shape.d % s == 0 && data.shape.h % s == 0 && data.shape.w % s == 0, "data.shape",
            "must be divisible by the total stride " + std::to_string(s));
    if (train.patch_size) require(*train.patch_size == data.shape, "train.patch_size", "must equal data.shape");
  }
  if (eval_dir.empty()) {
    require(eval_data.classes.size() == data.classes.size(), "eval_data.classes",
            "must have as many classes as data.classes");
    require(eval_data.modalities == data.modalities, "eval_data.modalities", "must equal data.modalities");
    require(eval_data.shape == data.shape, "eval_data.shape", "must equal data.shape");
  }
  const std::size_t stages = teacher_plan.num_stages();
  distill.validate(stages);
  for (std::size_t i = 0; i < ablation.size(); ++i) {
    try {
      ablation[i].config.validate(stages);
    } catch (const ValidationError& e) {
      const std::string f = e.field();
      throw ValidationError("ablation[" + std::to_string(i) + "]." + f, std::string(e.what()).substr(f.size() + 2));
    }
  }
}

models::NetworkPlan RunConfig::student_plan() const {
  return models::derive_student_plan(teacher_plan, width_factor, c_min);
}

// ---------------------------------------------------------------------------

json schema() {
  const json uint{{"type", "integer"}, {"minimum", 0}};
  const json num{{"type", "number"}};
  const json boolean{{"type", "boolean"}};
  const json str{{"type", "string"}};
  const json dims{{"type", "array"}, {"items", {{"type", "integer"}, {"minimum", 1}}}, {"minItems", 3}, {"maxItems", 3}};
  const json uint_list{{"type", "array"}, {"items", uint}};
  auto object = [](json props) {
    return json{{"type", "object"}, {"additionalProperties", false}, {"properties", std::move(props)}};
  };
  const json cls = object({{"fraction", {{"type", "number"}, {"exclusiveMinimum", 0}, {"exclusiveMaximum", 1}}},
                           {"shape", {{"enum", {"sphere", "ellipsoid", "shell"}}}}});
  const json data = object({{"seed", uint},
                            {"num_cases", {{"type", "integer"}, {"minimum", 1}}},
                            {"shape", dims},
                            {"noise_sigma", {{"type", "number"}, {"minimum", 0}}},
                            {"modalities", {{"type", "integer"}, {"minimum", 1}}},
                            {"classes", {{"type", "array"}, {"minItems", 1}, {"items", cls}}}});
  const json plan = object({{"stage_channels", {{"type", "array"}, {"minItems", 1}, {"items", uint}}},
                            {"width_factor", {{"type", "integer"}, {"minimum", 0}, {"maximum", 3}}},
                            {"c_min", {{"type", "integer"}, {"minimum", 1}}},
                            {"residual_encoder", boolean},
                            {"in_channels", {{"type", "integer"}, {"minimum", 1}}},
                            {"num_classes", {{"type", "integer"}, {"minimum", 2}}},
                            {"convs_per_stage", {{"type", "integer"}, {"minimum", 1}}},
                            {"strides", uint_list},
                            {"init_seed", uint}});
  const json train = object({{"epochs", {{"type", "integer"}, {"minimum", 1}}},
                             {"batch_size", {{"type", "integer"}, {"minimum", 1}}},
                             {"lr0", {{"type", "number"}, {"minimum", 0}}},
                             {"momentum", {{"type", "number"}, {"minimum", 0}, {"exclusiveMaximum", 1}}},
                             {"weight_decay", {{"type", "number"}, {"minimum", 0}}},
                             {"poly_exponent", {{"type", "number"}, {"minimum", 0}}},
                             {"grad_clip", {{"type", "number"}, {"minimum", 0}}},
                             {"seed", uint},
                             {"patch_size", {{"oneOf", {dims, {{"type", "null"}}}}}},
                             {"checkpoint_every", uint},
                             {"val_fraction", {{"type", "number"}, {"minimum", 0}, {"exclusiveMaximum", 1}}}});
  const json dist = object({{"temperature", {{"type", "number"}, {"exclusiveMinimum", 0}}},
                            {"gamma", {{"type", "number"}, {"minimum", 0}}},
                            {"lambda", {{"type", "number"}, {"minimum", 0}}},
                            {"sard_weight", {{"type", "number"}, {"minimum", 0}}},
                            {"stages", uint_list},
                            {"ca_stages", uint_list},
                            {"sard_fg", boolean},
                            {"sard_bg", boolean},
                            {"mask_align", boolean},
                            {"msca", boolean},
                            {"sard_split", boolean},
                            {"gc_ratio", {{"type", "integer"}, {"minimum", 1}}}});
  const json abl = object({{"name", {{"type", "string"}, {"minLength", 1}}}, {"distill", dist}});
  const json grad = object({{"seed", uint},
                            {"channels", {{"type", "integer"}, {"minimum", 1}}},
                            {"size", {{"type", "integer"}, {"minimum", 2}}},
                            {"classes", {{"type", "integer"}, {"minimum", 2}}},
                            {"coords_per_loss", {{"type", "integer"}, {"minimum", 1}}},
                            {"step", {{"type", "number"}, {"exclusiveMinimum", 0}}},
                            {"tolerance", {{"type", "number"}, {"exclusiveMinimum", 0}}}});
  json root = object({{"data", data},
                      {"eval_data", data},
                      {"data_dir", str},
                      {"eval_dir", str},
                      {"teacher_plan", plan},
                      {"width_factor", {{"type", "integer"}, {"minimum", 0}, {"maximum", 3}}},
                      {"c_min", {{"type", "integer"}, {"minimum", 1}}},
                      {"train", train},
                      {"distill", dist},
                      {"teacher_checkpoint", str},
                      {"checkpoint", str},
                      {"ablation", {{"type", "array"}, {"items", abl}}},
                      {"gradcheck", grad}});
  root["$schema"] = "https://json-schema.org/draft/2020-12/schema";
  root["title"] = "reco_kd run configuration";
  return root;
}

void apply_override(json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ValidationError("--override", "expected key=value, got '" + assignment + "'");
  }
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::exception&) {
    value = text;
  }
  json* cur = &j;
  std::stringstream ss(path);
  std::string seg;
  std::vector<std::string> segs;
  while (std::getline(ss, seg, '.')) segs.push_back(seg);
  for (std::size_t i = 0; i < segs.size(); ++i) {
    const auto& s = segs[i];
    if (s.empty()) throw ValidationError(path, "empty path segment");
    const bool last = i + 1 == segs.size();
    if (cur->is_array()) {
      std::size_t idx = 0;
      try {
        idx = std::stoul(s);
      } catch (const std::exception&) {
        throw ValidationError(path, "segment '" + s + "' must index an array");
      }
      if (idx >= cur->size()) throw ValidationError(path, "index " + s + " out of range");
      cur = &(*cur)[idx];
    } else {
      if (cur->is_null()) *cur = json::object();
      if (!cur->is_object()) throw ValidationError(path, "'" + s + "' descends into a non-object");
      cur = &(*cur)[s];
    }
    if (last) *cur = value;
  }
}

json load_json_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError(path, "cannot open config file");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ValidationError(path, std::string("invalid JSON: ") + e.what());
  }
}

std::vector<io::PhantomSpec> phantom_specs(const DataConfig& d) {
  Rng seeds(d.seed, 7);
  std::vector<io::PhantomSpec> out;
  for (std::size_t i = 0; i < d.num_cases; ++i) {
    io::PhantomSpec s;
    s.seed = seeds.next();
    s.shape = d.shape;
    s.classes = d.classes;
    s.noise_sigma = d.noise_sigma;
    s.modalities = d.modalities;
    out.push_back(s);
  }
  return out;
}

train::Dataset generate_dataset(const DataConfig& config, const std::string& id_prefix) {
  train::Dataset out;
  std::size_t i = 0;
  for (const auto& spec : phantom_specs(config)) {
    auto ph = io::generate_phantom(spec);
    char id[32];
    std::snprintf(id, sizeof id, "_%03zu", i++);
    out.push_back({id_prefix + id, std::move(ph.image), std::move(ph.labels)});
  }
  return out;
}

}  // namespace recokd::config
