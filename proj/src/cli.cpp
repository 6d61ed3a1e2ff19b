// Copyright (c) 2026, The ReCo-KD Authors
// SPDX-License-Identifier: Apache-2.0

#include "recokd/cli.hpp"

#include <chrono>
#include <cmath>
#include <ctime>
#include <iostream>

#include "CLI11.hpp"
#include "recokd/gradcheck.hpp"
#include "recokd/hash.hpp"
#include "recokd/nifti.hpp"

namespace recokd::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  io::write_file_bytes(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

std::string utc_stamp(const char* format) {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, format, &tm);
  return buf;
}

// Common options shared by every run command.
struct Flags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out = "runs";
  std::vector<std::string> overrides;
  std::string run_name;
  bool on_train = false;
  std::string manifest;  // rerun only
};

struct Context {
  std::string command;
  config::RunConfig cfg;
  json resolved;
  fs::path run_dir;
  RunManifest manifest;
  std::ostream& out;
};

config::RunConfig resolve(const Flags& f, const std::string& command, json& resolved) {
  json raw = f.config_path.empty() ? json::object() : config::load_json_file(f.config_path);
  // Overrides apply to the fully defaulted config so paths such as
  // data.classes.1.fraction exist even when the file omits them.
  if (!f.overrides.empty() || f.seed) raw = config::to_json(config::from_json(raw));
  for (const auto& o : f.overrides) config::apply_override(raw, o);
  if (f.seed) {
    if (command == "gen") {
      config::apply_override(raw, "data.seed=" + std::to_string(*f.seed));
    } else {
      config::apply_override(raw, "train.seed=" + std::to_string(*f.seed));
      config::apply_override(raw, "teacher_plan.init_seed=" + std::to_string(*f.seed));
      config::apply_override(raw, "gradcheck.seed=" + std::to_string(*f.seed));
    }
  }
  auto cfg = config::from_json(raw);
  resolved = config::to_json(cfg);
  return cfg;
}

std::uint64_t run_seed(const std::string& command, const config::RunConfig& c) {
  if (command == "gen" || command == "stats") return c.data.seed;
  if (command == "gradcheck") return c.gradcheck.seed;
  return c.train.seed;
}

void hash_dir_files(const fs::path& dir, std::map<std::string, std::string>& out) {
  if (!fs::is_directory(dir)) return;
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file()) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& p : files) out[p.string()] = sha256_file(p);
}

fs::path make_run_dir(const Flags& f, const std::string& command, std::uint64_t seed) {
  std::string base = f.run_name.empty() ? command + "-" + utc_stamp("%Y%m%dT%H%M%SZ") + "-" + std::to_string(seed)
                                        : f.run_name;
  fs::path dir = fs::path(f.out) / base;
  for (int i = 1; f.run_name.empty() && fs::exists(dir); ++i) dir = fs::path(f.out) / (base + "-" + std::to_string(i));
  fs::create_directories(dir);
  return dir;
}

train::Dataset training_data(const Context& c) {
  if (!c.cfg.data_dir.empty()) return read_dataset(c.cfg.data_dir);
  return config::generate_dataset(c.cfg.data, "case");
}

train::Dataset evaluation_data(const Context& c, bool on_train) {
  if (on_train) return training_data(c);
  if (!c.cfg.eval_dir.empty()) return read_dataset(c.cfg.eval_dir);
  return config::generate_dataset(c.cfg.eval_data, "eval");
}

models::NetworkState load_network(const std::string& path, const char* field) {
  if (path.empty()) throw ValidationError(field, "required for this command");
  if (!fs::exists(fs::path(path) / "manifest.json")) throw ValidationError(field, "no checkpoint at '" + path + "'");
  return models::load_checkpoint(path).state;
}

void write_training_outputs(const Context& c, const train::TrainResult& r, const std::string& kind) {
  write_text(c.run_dir / "metrics.csv", train::step_log_csv(r.log));
  models::Checkpoint ck{r.net, r.rng_state, r.steps,
                        {{"kind", kind}, {"best_epoch", r.best_epoch},
                         {"val_mdice", std::isnan(r.best_val_mdice) ? json(nullptr) : json(r.best_val_mdice)}}};
  models::save_checkpoint(ck, c.run_dir / "model");
}

void write_eval(const Context& c, const train::EvalReport& rep, const fs::path& dir) {
  fs::create_directories(dir);
  write_text(dir / "report.json", train::report_json(rep));
  write_text(dir / "report.csv", train::report_csv(rep));
  write_text(dir / "timing.json", train::timing_json(rep));
  c.out << "mdice=" << rep.mdice << "\n";
}

train::TrainHooks hooks(const Context& c) {
  train::TrainHooks h;
  h.checkpoint_dir = c.run_dir / "checkpoints";
  return h;
}

// ---------------------------------------------------------------------------
// Commands

int cmd_gen(Context& c) {
  const auto train_set = config::generate_dataset(c.cfg.data, "case");
  const auto eval_set = config::generate_dataset(c.cfg.eval_data, "eval");
  write_dataset(train_set, c.cfg.data, c.run_dir / "data");
  write_dataset(eval_set, c.cfg.eval_data, c.run_dir / "eval");
  std::vector<io::ClassStats> parts;
  for (const auto& k : train_set) parts.push_back(io::class_stats(k.labels));
  const auto merged = io::merge_stats(parts);
  write_text(c.run_dir / "data" / "stats.json", io::stats_json(merged));
  write_text(c.run_dir / "data" / "stats.csv", io::stats_csv(merged));
  c.out << "cases=" << train_set.size() << " eval_cases=" << eval_set.size() << "\n";
  return kExitOk;
}

int cmd_stats(Context& c) {
  const auto data = training_data(c);
  std::vector<io::ClassStats> parts;
  json per_case = json::array();
  for (const auto& k : data) {
    parts.push_back(io::class_stats(k.labels));
    per_case.push_back({{"id", k.id}, {"stats", json::parse(io::stats_json(parts.back()))}});
  }
  const auto merged = io::merge_stats(parts);
  write_text(c.run_dir / "stats.json", io::stats_json(merged));
  write_text(c.run_dir / "stats.csv", io::stats_csv(merged));
  write_text(c.run_dir / "stats_cases.json", per_case.dump(2) + "\n");
  c.out << io::stats_csv(merged);
  return kExitOk;
}

int cmd_train_teacher(Context& c) {
  const auto data = training_data(c);
  const auto r = train::train_teacher(data, c.cfg.teacher_plan, c.cfg.train, hooks(c));
  write_training_outputs(c, r, "teacher");
  write_eval(c, train::evaluate(r.net, data), c.run_dir / "eval_train");
  return kExitOk;
}

int cmd_train(Context& c) {
  const auto data = training_data(c);
  const auto r = train::train_plain(data, c.cfg.student_plan(), c.cfg.train, hooks(c));
  write_training_outputs(c, r, "student");
  write_eval(c, train::evaluate(r.net, evaluation_data(c, false)), c.run_dir / "eval");
  return kExitOk;
}

int cmd_distill(Context& c) {
  const auto teacher = load_network(c.cfg.teacher_checkpoint, "teacher_checkpoint");
  if (!(teacher.plan.same_topology(c.cfg.teacher_plan) &&
        teacher.plan.stage_channels == c.cfg.teacher_plan.stage_channels)) {
    throw ValidationError("teacher_checkpoint", "checkpoint plan does not match teacher_plan");
  }
  const auto data = training_data(c);
  const std::string before = teacher.hash();
  const auto r = train::distill_student(data, teacher, c.cfg.student_plan(), c.cfg.distill, c.cfg.train, hooks(c));
  if (teacher.hash() != before) throw Error("internal: teacher parameters changed during distillation");
  write_training_outputs(c, r, "student");
  write_eval(c, train::evaluate(r.net, evaluation_data(c, false)), c.run_dir / "eval");
  return kExitOk;
}

int cmd_eval(Context& c, bool on_train) {
  const auto net = load_network(c.cfg.checkpoint, "checkpoint");
  write_eval(c, train::evaluate(net, evaluation_data(c, on_train)), c.run_dir);
  return kExitOk;
}

// Component matrix used when the config lists no ablation entries: no
// distillation, each component alone, then everything.
std::vector<train::AblationEntry> component_matrix(const distill::DistillConfig& base) {
  auto only = [&base](const std::string& name, bool fg, bool bg, bool align, bool ca) {
    auto d = base;
    d.sard_fg = fg;
    d.sard_bg = bg;
    d.mask_align = align;
    d.msca = ca;
    return train::AblationEntry{name, d};
  };
  return {only("baseline", false, false, false, false), only("mask-align", false, false, true, false),
          only("fg-distill", true, false, false, false),  only("bg-distill", false, true, false, false),
          only("ms-ca", false, false, false, true),       only("full", true, true, true, true)};
}

int cmd_ablate(Context& c) {
  const auto teacher = load_network(c.cfg.teacher_checkpoint, "teacher_checkpoint");
  const auto matrix = c.cfg.ablation.empty() ? component_matrix(c.cfg.distill) : c.cfg.ablation;
  const auto result = train::run_ablation(training_data(c), evaluation_data(c, false), teacher, c.cfg.student_plan(),
                                          matrix, c.cfg.train);
  write_text(c.run_dir / "ablation.csv", train::ablation_csv(result));
  write_text(c.run_dir / "ablation_timing.csv", train::ablation_timing_csv(result));
  c.out << train::ablation_csv(result);
  return kExitOk;
}

int cmd_gradcheck(Context& c) {
  const auto& g = c.cfg.gradcheck;
  gradcheck::SuiteConfig s;
  s.seed = g.seed;
  s.channels = g.channels;
  s.size = g.size;
  s.classes = g.classes;
  s.options.coords = g.coords_per_loss;
  s.options.step = g.step;
  s.options.tolerance = g.tolerance;
  const auto results = gradcheck::run_suite(s);
  std::string csv = "loss,checked,skipped,max_rel_err,worst_param,passed\n";
  const gradcheck::CheckResult* worst = nullptr;
  bool ok = true;
  for (const auto& r : results) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%s,%zu,%zu,%.6e,%s,%d\n", r.loss.c_str(), r.checked, r.skipped, r.max_rel_err,
                  r.worst_param.c_str(), r.passed ? 1 : 0);
    csv += buf;
    ok = ok && r.passed;
    if (!worst || r.max_rel_err > worst->max_rel_err) worst = &r;
  }
  write_text(c.run_dir / "gradcheck.csv", csv);
  c.out << csv;
  c.out << "worst: " << worst->loss << " " << worst->worst_param << " rel_err=" << worst->max_rel_err
        << (ok ? " (pass)" : " (FAIL)") << "\n";
  return ok ? kExitOk : kExitRuntime;
}

int dispatch(Context& c, bool on_train) {
  const auto& cmd = c.command;
  if (cmd == "gen") return cmd_gen(c);
  if (cmd == "stats") return cmd_stats(c);
  if (cmd == "train-teacher") return cmd_train_teacher(c);
  if (cmd == "train") return cmd_train(c);
  if (cmd == "distill") return cmd_distill(c);
  if (cmd == "eval") return cmd_eval(c, on_train);
  if (cmd == "ablate") return cmd_ablate(c);
  if (cmd == "gradcheck") return cmd_gradcheck(c);
  throw ValidationError("command", "unknown command '" + cmd + "'");
}

std::map<std::string, std::string> input_hashes(const std::string& command, const config::RunConfig& cfg,
                                                const std::string& config_path) {
  std::map<std::string, std::string> h;
  if (!config_path.empty()) h[config_path] = sha256_file(config_path);
  if (command != "gen" && command != "gradcheck") {
    if (!cfg.data_dir.empty()) hash_dir_files(cfg.data_dir, h);
    if (!cfg.eval_dir.empty()) hash_dir_files(cfg.eval_dir, h);
  }
  if (command == "distill" || command == "ablate") hash_dir_files(cfg.teacher_checkpoint, h);
  if (command == "eval") hash_dir_files(cfg.checkpoint, h);
  return h;
}

int execute(const std::string& command, const Flags& f, const json* snapshot, std::ostream& out) {
  json resolved;
  config::RunConfig cfg;
  std::string config_path = f.config_path;
  if (snapshot) {
    cfg = config::from_json(*snapshot);
    resolved = config::to_json(cfg);
  } else {
    cfg = resolve(f, command, resolved);
  }
  const std::uint64_t seed = run_seed(command, cfg);
  Context c{command, cfg, resolved, make_run_dir(f, command, seed), {}, out};
  c.manifest.command = command;
  c.manifest.config_path = config_path;
  c.manifest.config = resolved;
  c.manifest.seed = seed;
  c.manifest.out_dir = c.run_dir.string();
  c.manifest.tool_version = RECOKD_VERSION;
  c.manifest.input_hashes = input_hashes(command, cfg, snapshot ? std::string() : config_path);
  c.manifest.created = utc_stamp("%Y-%m-%dT%H:%M:%SZ");
  json extra = c.manifest.to_json();
  if (command == "eval") extra["on_train"] = f.on_train;
  write_text(c.run_dir / "run_manifest.json", extra.dump(2) + "\n");
  out << "run_dir=" << c.run_dir.string() << "\n";
  return dispatch(c, f.on_train);
}

}  // namespace

json RunManifest::to_json() const {
  return json{{"command", command},       {"config_path", config_path},   {"config", config},
              {"seed", seed},             {"out_dir", out_dir},           {"tool_version", tool_version},
              {"input_hashes", input_hashes}, {"created", created}};
}

RunManifest RunManifest::from_json(const json& j) {
  RunManifest m;
  try {
    m.command = j.at("command").get<std::string>();
    m.config_path = j.value("config_path", "");
    m.config = j.at("config");
    m.seed = j.value("seed", std::uint64_t{0});
    m.out_dir = j.value("out_dir", "");
    m.tool_version = j.value("tool_version", "");
    m.input_hashes = j.value("input_hashes", std::map<std::string, std::string>{});
    m.created = j.value("created", "");
  } catch (const json::exception& e) {
    throw ValidationError("manifest", e.what());
  }
  return m;
}

void write_dataset(const train::Dataset& data, const config::DataConfig& spec, const fs::path& dir) {
  fs::create_directories(dir);
  json cases = json::array();
  for (const auto& k : data) {
    const std::string img = k.id + "_image.nii", lab = k.id + "_labels.nii";
    io::write_nifti1(k.image, dir / img);
    io::write_nifti1(k.labels, dir / lab);
    cases.push_back({{"id", k.id}, {"image", img}, {"labels", lab}});
  }
  json index{{"format", "reco_kd.dataset.v1"},
             {"num_foreground", data.empty() ? 0 : data.front().labels.num_foreground},
             {"generator", config::data_to_json(spec)},
             {"cases", cases}};
  write_text(dir / "index.json", index.dump(2) + "\n");
}

train::Dataset read_dataset(const fs::path& dir) {
  const fs::path index_path = dir / "index.json";
  if (!fs::exists(index_path)) throw ValidationError("data_dir", "no index.json in '" + dir.string() + "'");
  const json index = config::load_json_file(index_path.string());
  train::Dataset out;
  try {
    const auto r = index.at("num_foreground").get<std::size_t>();
    for (const auto& e : index.at("cases")) {
      train::Case k;
      k.id = e.at("id").get<std::string>();
      k.image = io::read_image(dir / e.at("image").get<std::string>());
      k.labels = io::read_labels(dir / e.at("labels").get<std::string>(), r);
      out.push_back(std::move(k));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(index_path.string(), e.what());
  }
  return out;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data(), out, err);
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"reco_kd: structure- and context-aware distillation for 3D segmentation"};
  app.set_version_flag("--version", std::string(RECOKD_VERSION));
  app.require_subcommand(1);
  Flags f;
  std::string chosen;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", f.config_path, "JSON config file")->check(CLI::ExistingFile);
    sub->add_option("--seed", f.seed, "seed override");
    sub->add_option("--out", f.out, "parent directory for run directories")->capture_default_str();
    sub->add_option("--override", f.overrides, "dotted-path override key=value (repeatable)");
    sub->add_option("--run-name", f.run_name, "fixed run directory name instead of command-timestamp-seed");
  };
  const std::vector<std::pair<std::string, std::string>> commands{
      {"gen", "generate a phantom dataset (training and evaluation sets)"},
      {"stats", "per-class voxel statistics of a dataset"},
      {"train-teacher", "train the full-width teacher"},
      {"train", "train the width-scaled student without distillation"},
      {"distill", "train the student with distillation from a teacher checkpoint"},
      {"eval", "evaluate a checkpoint"},
      {"ablate", "run an ablation matrix of distillation configs"},
      {"gradcheck", "finite-difference check of every loss gradient"}};
  for (const auto& [name, help] : commands) {
    auto* sub = app.add_subcommand(name, help);
    add_common(sub);
    if (name == "eval") sub->add_flag("--on-train", f.on_train, "evaluate on the training data");
    sub->callback([&chosen, n = name] { chosen = n; });
  }
  auto* rerun = app.add_subcommand("rerun", "repeat a run from its run_manifest.json");
  rerun->add_option("manifest", f.manifest, "path to run_manifest.json")->required()->check(CLI::ExistingFile);
  rerun->add_option("--out", f.out, "parent directory for the new run directory");
  rerun->add_option("--run-name", f.run_name, "fixed run directory name");
  rerun->callback([&chosen] { chosen = "rerun"; });
  auto* schema = app.add_subcommand("schema", "print the config JSON schema");
  schema->callback([&chosen] { chosen = "schema"; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitValidation;
  }

  try {
    if (chosen == "schema") {
      out << config::schema().dump(2) << "\n";
      return kExitOk;
    }
    if (chosen == "rerun") {
      const auto m = RunManifest::from_json(config::load_json_file(f.manifest));
      const json mj = config::load_json_file(f.manifest);
      Flags g;
      g.out = f.out;
      g.run_name = f.run_name;
      g.on_train = mj.value("on_train", false);
      return execute(m.command, g, &m.config, out);
    }
    return execute(chosen, f, nullptr, out);
  } catch (const ValidationError& e) {
    err << "validation error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const DivergenceError& e) {
    err << "divergence: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

}  // namespace recokd::cli
