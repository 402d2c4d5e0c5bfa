#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "plancraft/data.hpp"
#include "plancraft/errors.hpp"
#include "plancraft/expert.hpp"
#include "plancraft/perturb.hpp"
#include "plancraft/run.hpp"
#include "plancraft/scene_json.hpp"
#include "plancraft/service.hpp"

using namespace plancraft;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumerical = 3;
constexpr int kExitGate = 4;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  bool paper_scale = false;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "Run config JSON (a bare model config is accepted by train)");
  cmd->add_option("--seed", c.seed, "Overrides the run seed, model seed and training seed");
  cmd->add_flag("--paper-scale", c.paper_scale, "Paper hyperparameters instead of desk-scale defaults");
}

json read_json(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open " + path);
  try {
    return json::parse(f);
  } catch (const json::parse_error& e) {
    throw SchemaError(path, std::string("invalid JSON: ") + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write " + path.string());
  f << text;
}

run::RunConfig load_config(const Common& c, bool model_only_ok = false) {
  run::RunConfig cfg = run::default_run_config();
  if (!c.config.empty()) {
    const auto j = read_json(c.config);
    if (model_only_ok && j.is_object() && !j.contains("version")) {
      cfg = run::run_config_from_json({{"version", run::kRunConfigVersion}, {"model", j}});
    } else {
      cfg = run::run_config_from_json(j);
    }
  }
  if (c.paper_scale) cfg = run::paper_scale(cfg);
  if (c.seed) {
    cfg.seed = *c.seed;
    cfg.model.seed = *c.seed;
    cfg.train.seed = *c.seed;
  }
  return cfg;
}

void log(const std::string& line) { std::cerr << line << std::endl; }

std::vector<model::EncodedSample> load_encoded(const fs::path& dir, const model::ModelConfig& mc) {
  return run::encode(data::read_shards(dir.string()), mc);
}

/// DIR/train and DIR/val when present, else DIR itself as the training set.
std::pair<fs::path, std::optional<fs::path>> data_dirs(const std::string& dir) {
  const fs::path root(dir);
  if (fs::exists(root / "train" / "manifest.json")) {
    std::optional<fs::path> val;
    if (fs::exists(root / "val" / "manifest.json")) val = root / "val";
    return {root / "train", val};
  }
  return {root, std::nullopt};
}

int cmd_collect(const Common& common, const std::string& out, const std::vector<std::string>& names, int seeds,
                std::optional<double> augment_frac, bool bias_train) {
  auto cfg = load_config(common);
  if (!names.empty()) cfg.scenarios = names;
  if (seeds > 0) {
    const auto first = cfg.collect.train_seeds.empty() ? 100 : cfg.collect.train_seeds.front();
    cfg.collect.train_seeds.clear();
    for (int i = 0; i < seeds; ++i) cfg.collect.train_seeds.push_back(first + static_cast<std::uint64_t>(i));
  }
  if (augment_frac) cfg.collect.augment_fraction = *augment_frac;
  if (bias_train) {
    cfg.collect.augment_fraction = 0.0;
    cfg.collect.expert.trajectory_noise = 0.0;
  }
  const auto t0 = std::chrono::steady_clock::now();
  for (const auto& [name, seed_list, augment] :
       {std::tuple{"train", cfg.collect.train_seeds, true}, std::tuple{"val", cfg.collect.val_seeds, false}}) {
    if (seed_list.empty()) continue;
    const auto ds = data::collect(run::collect_config(cfg, seed_list, augment));
    json extra{{"config", run::to_json(cfg)}, {"split", name}, {"bias_train", bias_train}};
    data::write_shards(ds.samples, (fs::path(out) / name).string(), cfg.collect.shard_size, extra);
    log(std::string(name) + ": " + std::to_string(ds.samples.size()) + " samples (" +
        std::to_string(ds.stats.augmented) + " augmented) from " + std::to_string(ds.stats.episodes) + " episodes, " +
        std::to_string(ds.stats.discarded_episodes) + " discarded");
  }
  log("collected in " + std::to_string(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()) + " s");
  return 0;
}

int cmd_train(const Common& common, const std::string& data_dir, const std::string& out, std::optional<int> epochs) {
  auto cfg = load_config(common, true);
  if (epochs) cfg.train.epochs = *epochs;
  const auto [train_dir, val_dir] = data_dirs(data_dir);
  const auto train_set = load_encoded(train_dir, cfg.model);
  const auto val_set = val_dir ? load_encoded(*val_dir, cfg.model) : std::vector<model::EncodedSample>{};
  log("training on " + std::to_string(train_set.size()) + " samples, validating on " + std::to_string(val_set.size()));
  model::PlannerModel m(cfg.model);
  const auto t0 = std::chrono::steady_clock::now();
  json epochs_json = json::array();
  model::train(m, train_set, val_set, cfg.train, [&](const model::EpochStats& e) {
    json j{{"epoch", e.epoch}, {"lr", e.lr}, {"train_loss", e.train_loss}, {"train_point_l1", e.train_point_l1}};
    std::string line = "epoch " + std::to_string(e.epoch) + " loss " + std::to_string(e.train_loss);
    if (e.val) {
      j["val"] = {{"loss", e.val->loss}, {"point_l1", e.val->point_l1}, {"ade", e.val->ade}};
      line += " | val loss " + std::to_string(e.val->loss) + " ade " + std::to_string(e.val->ade);
    }
    epochs_json.push_back(j);
    log(line + " (" + std::to_string(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()) + " s)");
  });
  model::save_checkpoint(m, out);
  write_text(out + ".json", json{{"model", m.id()}, {"config", run::to_json(cfg)}, {"epochs", epochs_json}}.dump(2) + "\n");
  log("wrote " + out + " (model " + m.id() + ")");
  return 0;
}

int cmd_eval(const Common& common, const std::string& model_path, bool use_expert, const std::string& data_dir,
             const std::vector<std::uint64_t>& seeds, const std::string& out) {
  auto cfg = load_config(common);
  if (!seeds.empty()) cfg.eval.seeds = seeds;
  if (model_path.empty() == !use_expert) throw ConfigError("eval: give exactly one of --model and --expert");
  json report;
  std::optional<model::PlannerModel> m;
  sim::PlannerFn planner;
  if (use_expert) {
    const auto ec = cfg.collect.expert;
    planner = [ec](const sim::World& w, const scene::Scene&) { return expert::to_plan_output(expert::expert_plan(w, ec)); };
    report["policy"] = "expert";
  } else {
    m.emplace(model::load_checkpoint(model_path));
    planner = run::model_planner(*m);
    report["policy"] = m->id();
    if (!data_dir.empty()) {
      const auto [train_dir, val_dir] = data_dirs(data_dir);
      const auto held_out = load_encoded(val_dir ? *val_dir : train_dir, m->config());
      const auto stats = model::evaluate(*m, held_out);
      report["held_out"] = {{"samples", held_out.size()}, {"loss", stats.loss}, {"point_l1", stats.point_l1}, {"ade", stats.ade}};
      log("held-out ADE " + std::to_string(stats.ade) + " m over " + std::to_string(held_out.size()) + " samples");
    }
  }
  const auto result = run::evaluate_closed_loop(planner, run::templates(cfg), cfg.eval.seeds, cfg.eval);
  report["closed_loop"] = run::to_json(result);
  log("closed loop: SR " + std::to_string(result.success_rate) + ", DS " + std::to_string(result.ds.mean) + ", NDS " +
      std::to_string(result.nds.mean) + " over " + std::to_string(result.episodes.size()) + " episodes");
  for (const auto& e : result.episodes) {
    if (e.result.rc >= 1.0 && std::all_of(e.result.counts.begin(), e.result.counts.end(), [](int c) { return c == 0; })) continue;
    log("  " + e.scenario + " seed " + std::to_string(e.seed) + ": RC " + std::to_string(e.result.rc) + ", " + e.termination);
  }
  const auto text = report.dump(2) + "\n";
  if (out.empty()) std::cout << text;
  else write_text(out, text);
  return 0;
}

int cmd_ablate(const Common& common, const std::string& data_dir, const std::string& out) {
  const auto cfg = load_config(common);
  const auto [train_dir, val_dir] = data_dirs(data_dir);
  const auto train_set = data::read_shards(train_dir.string());
  const auto val_set = val_dir ? data::read_shards(val_dir->string()) : std::vector<data::TrainingSample>{};
  const auto table = run::ablate(cfg, train_set, val_set, log);
  json j = run::to_json(table);
  j["config"] = run::to_json(cfg);
  write_text(fs::path(out) / "ablation.json", j.dump(2) + "\n");
  const auto md = run::to_markdown(table);
  write_text(fs::path(out) / "ablation.md", md);
  std::cout << md;
  return 0;
}

/// Probe gates for bias-trained models; true when the preset has none.
bool probe_gate(const perturb::PresetRun& run, std::string& message) {
  if (!run.sweep) return true;
  const auto jumps = perturb::jump_detector(*run.sweep);
  if (run.preset == "fig5_rotation") {
    for (const auto& [value, delta] : jumps) {
      if (value >= 5.0 && value <= 25.0) {
        message = "jump of " + std::to_string(delta) + " m/s at " + std::to_string(value) + " deg";
        return true;
      }
    }
    message = "no jump within [5, 25] deg";
    return false;
  }
  if (run.preset == "fig7_cutin") {
    for (const auto& [value, delta] : jumps) {
      for (const auto& rec : run.sweep->records) {
        if (rec.value == value && rec.reference_distance && *rec.reference_distance < 8.0) {
          message = "jump of " + std::to_string(delta) + " m/s at " + std::to_string(*rec.reference_distance) + " m";
          return true;
        }
      }
    }
    message = "no jump below 8 m";
    return false;
  }
  return true;
}

int cmd_perturb(const std::string& scene_path, const std::string& preset_name, const std::string& model_path,
                const std::string& out, bool csv, bool bias_train) {
  const auto preset = perturb::find_preset(preset_name);
  const auto m = model::load_checkpoint(model_path);
  std::optional<scene::Scene> scene;
  if (!scene_path.empty()) scene = scene_from_json(read_json(scene_path));
  const auto run = perturb::run_preset(preset, m, scene);
  json j = perturb::to_json(run);
  if (run.sweep) {
    json jumps = json::array();
    for (const auto& [value, delta] : perturb::jump_detector(*run.sweep)) jumps.push_back({{"value", value}, {"delta", delta}});
    j["jumps"] = jumps;
    log(preset.name + ": " + std::to_string(jumps.size()) + " jump(s) " + jumps.dump());
  }
  write_text(out, j.dump(2) + "\n");
  if (csv && run.sweep) write_text(fs::path(out).replace_extension(".csv"), perturb::to_csv(*run.sweep));
  if (bias_train) {
    std::string message;
    const bool ok = probe_gate(run, message);
    log(std::string("probe gate ") + (ok ? "PASS" : "FAIL") + ": " + preset.name + " " + message);
    if (!ok) return kExitGate;
  }
  return 0;
}

int cmd_serve(const Common& common, const std::string& model_path, const std::string& host, int port) {
  const auto cfg = load_config(common);
  service::Service svc(model::load_checkpoint(model_path), run::templates(cfg));
  log("serving model " + svc.model().id() + " on http://" + host + ":" + std::to_string(port));
  service::serve(svc, host, port);
  return 0;
}

int cmd_export(const Common& common, const std::string& out) {
  const auto cfg = load_config(common);
  const fs::path root(out);
  for (auto k : sim::kAllScenarioKinds) {
    const auto def = sim::default_scenario(k);
    write_text(root / "scenarios" / (def.name + ".json"), sim::to_json(def).dump(2) + "\n");
  }
  for (const auto& p : perturb::builtin_presets()) {
    write_text(root / "configs" / "presets" / (p.name + ".json"), perturb::to_json(p).dump(2) + "\n");
  }
  write_text(root / "configs" / "desk.json", run::to_json(cfg).dump(2) + "\n");
  write_text(root / "configs" / "paper_scale.json", run::to_json(run::paper_scale(cfg)).dump(2) + "\n");
  write_text(root / "configs" / "model.json", model::to_json(cfg.model).dump(2) + "\n");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"plancraft: object-centric planning transformer toolkit"};
  app.require_subcommand(1);
  Common common;

  auto* collect = app.add_subcommand("collect", "Roll out the expert and write training shards");
  std::string collect_out;
  std::vector<std::string> templates;
  int seeds = 0;
  std::optional<double> augment_frac;
  bool bias_train = false;
  add_common(collect, common);
  collect->add_option("--out", collect_out, "Output directory (train/ and val/ shards)")->required();
  collect->add_option("--templates", templates, "Template names (default: all)");
  collect->add_option("--seeds", seeds, "Number of training seeds");
  collect->add_option("--augment-frac", augment_frac, "Fraction of recovery-augmented samples");
  collect->add_flag("--bias-train", bias_train, "No augmentation and deterministic expert overtakes");

  auto* train = app.add_subcommand("train", "Train a planner on collected shards");
  std::string data_dir, train_out;
  std::optional<int> epochs;
  add_common(train, common);
  train->add_option("--data", data_dir, "Dataset directory")->required();
  train->add_option("--out", train_out, "Checkpoint path")->required();
  train->add_option("--epochs", epochs, "Overrides the configured epoch count");

  auto* eval = app.add_subcommand("eval", "Closed-loop evaluation and held-out ADE");
  std::string model_path, eval_out, eval_data;
  bool use_expert = false;
  std::vector<std::uint64_t> eval_seeds;
  add_common(eval, common);
  eval->add_option("--model", model_path, "Checkpoint");
  eval->add_flag("--expert", use_expert, "Evaluate the expert instead of a model");
  eval->add_option("--data", eval_data, "Dataset directory for held-out ADE (uses val/)");
  eval->add_option("--eval-seeds", eval_seeds, "Evaluation seeds");
  eval->add_option("--out", eval_out, "Report path (default: stdout)");

  auto* ablate = app.add_subcommand("ablate", "3x3 representation/generator grid");
  std::string ablate_data, ablate_out;
  add_common(ablate, common);
  ablate->add_option("--data", ablate_data, "Dataset directory")->required();
  ablate->add_option("--out", ablate_out, "Report directory")->required();

  auto* perturb_cmd = app.add_subcommand("perturb", "Run a probe preset against a model");
  std::string scene_path, preset, perturb_model, perturb_out;
  bool csv = false, perturb_bias = false;
  perturb_cmd->add_option("--scene", scene_path, "Scene JSON replacing the preset's snapshot");
  perturb_cmd->add_option("--preset", preset, "Preset name or JSON file")->required();
  perturb_cmd->add_option("--model", perturb_model, "Checkpoint")->required();
  perturb_cmd->add_option("--out", perturb_out, "Curve JSON path")->required();
  perturb_cmd->add_flag("--csv", csv, "Also write two-column CSV next to --out");
  perturb_cmd->add_flag("--bias-train", perturb_bias, "Gate on the shortcut probes of a bias-trained model");

  auto* serve = app.add_subcommand("serve", "HTTP API for the workbench");
  std::string serve_model, host = "127.0.0.1";
  int port = 8080;
  add_common(serve, common);
  serve->add_option("--model", serve_model, "Checkpoint")->required();
  serve->add_option("--host", host, "Bind address");
  serve->add_option("--port", port, "Port");

  auto* exp = app.add_subcommand("export", "Write scenario templates, presets and default configs");
  std::string export_out = ".";
  add_common(exp, common);
  exp->add_option("--out", export_out, "Root directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*collect) return cmd_collect(common, collect_out, templates, seeds, augment_frac, bias_train);
    if (*train) return cmd_train(common, data_dir, train_out, epochs);
    if (*eval) return cmd_eval(common, model_path, use_expert, eval_data, eval_seeds, eval_out);
    if (*ablate) return cmd_ablate(common, ablate_data, ablate_out);
    if (*perturb_cmd) return cmd_perturb(scene_path, preset, perturb_model, perturb_out, csv, perturb_bias);
    if (*serve) return cmd_serve(common, serve_model, host, port);
    if (*exp) return cmd_export(common, export_out);
  } catch (const NumericalFault& e) {
    std::cerr << "numerical fault: " << e.what() << std::endl;
    return kExitNumerical;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << std::endl;
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return kExitData;
  }
  return kExitUsage;
}
