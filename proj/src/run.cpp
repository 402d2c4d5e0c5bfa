#include "plancraft/run.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "plancraft/errors.hpp"
#include "plancraft/parallel.hpp"

namespace plancraft::run {

using nlohmann::json;

namespace {

std::vector<std::uint64_t> seed_range(std::uint64_t first, int n) {
  std::vector<std::uint64_t> out;
  for (int i = 0; i < n; ++i) out.push_back(first + static_cast<std::uint64_t>(i));
  return out;
}

json to_json(const data::AugmentConfig& a) {
  return {{"max_lateral", a.max_lateral},
          {"max_rotation_deg", a.max_rotation_deg},
          {"rejoin_distance", a.rejoin_distance},
          {"max_attempts", a.max_attempts}};
}

data::AugmentConfig augment_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("collect.augment: expected an object");
  data::AugmentConfig a;
  for (const auto& [key, v] : j.items()) {
    if (key == "max_lateral") a.max_lateral = v.get<double>();
    else if (key == "max_rotation_deg") a.max_rotation_deg = v.get<double>();
    else if (key == "rejoin_distance") a.rejoin_distance = v.get<double>();
    else if (key == "max_attempts") a.max_attempts = v.get<int>();
    else throw ConfigError("collect.augment." + key + ": unknown key");
  }
  return a;
}

CollectSettings collect_from_json(const json& j, CollectSettings c) {
  if (!j.is_object()) throw ConfigError("collect: expected an object");
  for (const auto& [key, v] : j.items()) {
    if (key == "train_seeds") c.train_seeds = v.get<std::vector<std::uint64_t>>();
    else if (key == "val_seeds") c.val_seeds = v.get<std::vector<std::uint64_t>>();
    else if (key == "augment_fraction") c.augment_fraction = v.get<double>();
    else if (key == "augment") c.augment = augment_from_json(v);
    else if (key == "expert") c.expert = expert::expert_config_from_json(v);
    else if (key == "shard_size") c.shard_size = v.get<std::size_t>();
    else throw ConfigError("collect." + key + ": unknown key");
  }
  if (c.augment_fraction < 0.0 || c.augment_fraction > 1.0) throw ConfigError("collect.augment_fraction: expected [0, 1]");
  if (c.shard_size == 0) throw ConfigError("collect.shard_size: must be positive");
  return c;
}

EvalSettings eval_from_json(const json& j, EvalSettings e) {
  if (!j.is_object()) throw ConfigError("eval: expected an object");
  for (const auto& [key, v] : j.items()) {
    if (key == "seeds") e.seeds = v.get<std::vector<std::uint64_t>>();
    else if (key == "sim_dt") e.episode.sim_dt = v.get<double>();
    else if (key == "planner_every") e.episode.planner_every = v.get<int>();
    else if (key == "time_limit") e.episode.time_limit = v.get<double>();
    else if (key == "controller") e.episode.controller = control::controller_config_from_json(v);
    else if (key == "penalties") e.penalties = metrics::penalty_table_from_json(v);
    else throw ConfigError("eval." + key + ": unknown key");
  }
  if (e.episode.sim_dt <= 0.0 || e.episode.planner_every < 1 || e.episode.time_limit <= 0.0) {
    throw ConfigError("eval: sim_dt, planner_every and time_limit must be positive");
  }
  return e;
}

AblateSettings ablate_from_json(const json& j, AblateSettings a) {
  if (!j.is_object()) throw ConfigError("ablate: expected an object");
  for (const auto& [key, v] : j.items()) {
    if (key == "train_seeds") a.train_seeds = v.get<std::vector<std::uint64_t>>();
    else if (key == "eval_seeds") a.eval_seeds = v.get<std::vector<std::uint64_t>>();
    else if (key == "epochs") a.epochs = v.get<int>();
    else if (key == "sample_stride") a.sample_stride = v.get<int>();
    else throw ConfigError("ablate." + key + ": unknown key");
  }
  if (a.epochs < 1 || a.sample_stride < 1) throw ConfigError("ablate: epochs and sample_stride must be positive");
  if (a.train_seeds.empty() || a.eval_seeds.empty()) throw ConfigError("ablate: seed lists must not be empty");
  return a;
}

double per_km(int count, double km) { return km > 0.0 ? count / km : 0.0; }

}  // namespace

RunConfig default_run_config() {
  RunConfig c;
  c.collect.train_seeds = seed_range(100, 12);
  c.collect.val_seeds = seed_range(900, 2);
  c.model.d_model = 64;
  c.model.layers = 2;
  c.model.heads = 8;
  c.train.epochs = 15;
  c.train.batch_size = 32;
  c.train.lr = 1e-3;
  c.eval.seeds = seed_range(1000, 5);
  c.eval.episode.record_scenes = false;
  return c;
}

RunConfig paper_scale(RunConfig c) {
  const model::ModelConfig full;
  const model::TrainConfig paper;
  c.model.d_model = full.d_model;
  c.model.layers = full.layers;
  c.model.heads = full.heads;
  c.model.raster_channels = full.raster_channels;
  c.train.epochs = paper.epochs;
  c.train.batch_size = paper.batch_size;
  c.train.lr = paper.lr;
  c.ablate.epochs = paper.epochs;
  c.ablate.sample_stride = 1;
  return c;
}

json to_json(const RunConfig& c) {
  return {{"version", c.version},
          {"seed", c.seed},
          {"output_dir", c.output_dir},
          {"scenarios", c.scenarios},
          {"scenario_dir", c.scenario_dir},
          {"collect",
           {{"train_seeds", c.collect.train_seeds},
            {"val_seeds", c.collect.val_seeds},
            {"augment_fraction", c.collect.augment_fraction},
            {"augment", to_json(c.collect.augment)},
            {"expert", expert::to_json(c.collect.expert)},
            {"shard_size", c.collect.shard_size}}},
          {"model", model::to_json(c.model)},
          {"train", model::to_json(c.train)},
          {"eval",
           {{"seeds", c.eval.seeds},
            {"sim_dt", c.eval.episode.sim_dt},
            {"planner_every", c.eval.episode.planner_every},
            {"time_limit", c.eval.episode.time_limit},
            {"controller", control::to_json(c.eval.episode.controller)},
            {"penalties", metrics::to_json(c.eval.penalties)}}},
          {"ablate",
           {{"train_seeds", c.ablate.train_seeds},
            {"eval_seeds", c.ablate.eval_seeds},
            {"epochs", c.ablate.epochs},
            {"sample_stride", c.ablate.sample_stride}}}};
}

RunConfig run_config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config: expected an object");
  if (!j.contains("version")) throw ConfigError("version: missing");
  RunConfig c = default_run_config();
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "version") {
        c.version = v.get<int>();
        if (c.version != kRunConfigVersion) {
          throw ConfigError("version: unsupported config version " + std::to_string(c.version));
        }
      } else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else if (key == "output_dir") c.output_dir = v.get<std::string>();
      else if (key == "scenarios") c.scenarios = v.get<std::vector<std::string>>();
      else if (key == "scenario_dir") c.scenario_dir = v.get<std::string>();
      else if (key == "collect") c.collect = collect_from_json(v, c.collect);
      else if (key == "model") {
        json merged = model::to_json(c.model);
        if (!v.is_object()) throw ConfigError("model: expected an object");
        for (const auto& [k, x] : v.items()) merged[k] = x;
        c.model = model::model_config_from_json(merged);
      } else if (key == "train") {
        json merged = model::to_json(c.train);
        if (!v.is_object()) throw ConfigError("train: expected an object");
        for (const auto& [k, x] : v.items()) merged[k] = x;
        c.train = model::train_config_from_json(merged);
      } else if (key == "eval") c.eval = eval_from_json(v, c.eval);
      else if (key == "ablate") c.ablate = ablate_from_json(v, c.ablate);
      else throw ConfigError(key + ": unknown key");
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config " + path);
  try {
    return run_config_from_json(json::parse(f));
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path + ": " + e.what());
  }
}

std::vector<sim::ScenarioDef> templates(const RunConfig& c) {
  std::vector<sim::ScenarioDef> all;
  if (!c.scenario_dir.empty()) {
    all = sim::load_scenario_dir(c.scenario_dir);
  } else {
    for (auto k : sim::kAllScenarioKinds) all.push_back(sim::default_scenario(k));
  }
  if (c.scenarios.empty()) return all;
  std::vector<sim::ScenarioDef> out;
  for (const auto& name : c.scenarios) {
    auto it = std::find_if(all.begin(), all.end(), [&](const auto& d) { return d.name == name; });
    if (it == all.end()) throw ConfigError("scenarios: unknown template " + name);
    out.push_back(*it);
  }
  return out;
}

data::CollectConfig collect_config(const RunConfig& c, const std::vector<std::uint64_t>& seeds, bool augment) {
  data::CollectConfig cc;
  cc.templates = templates(c);
  cc.seeds = seeds;
  cc.expert = c.collect.expert;
  cc.episode = c.eval.episode;
  cc.episode.record_scenes = true;
  cc.augment = c.collect.augment;
  cc.augment_fraction = augment ? c.collect.augment_fraction : 0.0;
  cc.shard_size = c.collect.shard_size;
  cc.seed = c.seed;
  return cc;
}

std::vector<model::EncodedSample> encode(const std::vector<data::TrainingSample>& samples, const model::ModelConfig& cfg,
                                         int stride) {
  std::vector<model::EncodedSample> out;
  for (std::size_t i = 0; i < samples.size(); i += static_cast<std::size_t>(std::max(1, stride))) {
    out.push_back({model::encode_scene(samples[i].scene), model::make_targets(samples[i].label, cfg)});
  }
  return out;
}

sim::PlannerFn model_planner(const model::PlannerModel& model) {
  return [&model](const sim::World&, const scene::Scene& s) { return model.infer(s); };
}

ClosedLoop evaluate_closed_loop(const sim::PlannerFn& planner, const std::vector<sim::ScenarioDef>& defs,
                                const std::vector<std::uint64_t>& seeds, const EvalSettings& settings) {
  if (defs.empty() || seeds.empty()) throw ConfigError("eval: need at least one template and one seed");
  ClosedLoop out;
  out.episodes.resize(defs.size() * seeds.size());
  parallel_for(out.episodes.size(), [&](std::size_t i) {
    const auto& def = defs[i / seeds.size()];
    const auto seed = seeds[i % seeds.size()];
    const auto log = sim::run_episode(sim::build_world(def, seed), planner, settings.episode);
    out.episodes[i] = {def.name, seed, metrics::evaluate(log, settings.penalties), log.termination};
  });
  std::vector<metrics::RouteResult> results;
  std::vector<double> ds, nds, rc;
  for (const auto& e : out.episodes) {
    results.push_back(e.result);
    ds.push_back(e.result.ds);
    nds.push_back(e.result.nds);
    rc.push_back(e.result.rc);
  }
  out.success_rate = metrics::success_rate(results);
  out.ds = metrics::summarize(ds);
  out.nds = metrics::summarize(nds);
  out.rc = metrics::summarize(rc);
  return out;
}

json to_json(const ClosedLoop& r) {
  json episodes = json::array();
  for (const auto& e : r.episodes) {
    json j = metrics::to_json(e.result);
    j["scenario"] = e.scenario;
    j["seed"] = e.seed;
    j["termination"] = e.termination;
    episodes.push_back(j);
  }
  return {{"success_rate", r.success_rate},
          {"ds", {{"mean", r.ds.mean}, {"std", r.ds.std}}},
          {"nds", {{"mean", r.nds.mean}, {"std", r.nds.std}}},
          {"rc", {{"mean", r.rc.mean}, {"std", r.rc.std}}},
          {"episodes", episodes}};
}

AblationTable ablate(const RunConfig& config, const std::vector<data::TrainingSample>& train_set,
                     const std::vector<data::TrainingSample>& val_set, const Progress& progress) {
  const auto defs = templates(config);
  std::vector<model::EncodedScene> train_scenes, val_scenes;
  std::vector<const expert::PlanLabel*> train_labels, val_labels;
  const auto stride = static_cast<std::size_t>(config.ablate.sample_stride);
  for (std::size_t i = 0; i < train_set.size(); i += stride) {
    train_scenes.push_back(model::encode_scene(train_set[i].scene));
    train_labels.push_back(&train_set[i].label);
  }
  for (const auto& s : val_set) {
    val_scenes.push_back(model::encode_scene(s.scene));
    val_labels.push_back(&s.label);
  }

  AblationTable table;
  for (auto gen : {model::Generator::SingleTokenGRU, model::Generator::MultiTokenGRU, model::Generator::MultiTokenLinear}) {
    for (auto head : {HeadKind::WPS, HeadKind::PATH, HeadKind::PathWaypoints}) {
      AblationCell cell;
      cell.head = head;
      cell.generator = gen;
      model::ModelConfig mc = config.model;
      mc.head = head;
      mc.generator = gen;
      std::vector<model::EncodedSample> tr, va;
      for (std::size_t i = 0; i < train_scenes.size(); ++i) tr.push_back({train_scenes[i], model::make_targets(*train_labels[i], mc)});
      for (std::size_t i = 0; i < val_scenes.size(); ++i) va.push_back({val_scenes[i], model::make_targets(*val_labels[i], mc)});
      for (auto seed : config.ablate.train_seeds) {
        const std::string name = std::string(to_string(head)) + "/" + std::string(model::to_string(gen)) + "/seed " +
                                 std::to_string(seed);
        std::vector<ClosedLoop> runs;
        try {
          mc.seed = seed;
          model::PlannerModel m(mc);
          model::TrainConfig tc = config.train;
          tc.epochs = config.ablate.epochs;
          tc.seed = seed;
          const auto stats = model::train(m, tr, va, tc);
          cell.val_ade.push_back(stats.back().val ? stats.back().val->ade : std::nan(""));
          const auto planner = model_planner(m);
          for (auto eval_seed : config.ablate.eval_seeds) {
            runs.push_back(evaluate_closed_loop(planner, defs, {eval_seed}, config.eval));
          }
          if (progress) progress(name + ": NDS " + std::to_string(runs.back().nds.mean));
        } catch (const std::exception& e) {
          runs.clear();
          cell.errors.push_back(name + ": " + e.what());
          if (progress) progress(name + ": failed: " + e.what());
        }
        cell.runs.push_back(std::move(runs));
      }
      table.cells.push_back(std::move(cell));
    }
  }
  return table;
}

namespace {

struct CellStats {
  metrics::Summary nds, ds, rc, sr, cv, cl, st;
  std::array<metrics::Summary, metrics::kNumInfractionKinds> per_kind;
  int trained = 0;
};

CellStats cell_stats(const AblationCell& cell) {
  std::vector<double> nds, ds, rc, sr, cv, cl, st;
  std::array<std::vector<double>, metrics::kNumInfractionKinds> kinds;
  int trained = 0;
  for (const auto& runs : cell.runs) {
    if (runs.empty()) continue;
    ++trained;
    double n = 0, d = 0, r = 0, s = 0, km = 0;
    metrics::InfractionCounts counts{};
    std::size_t episodes = 0;
    for (const auto& run : runs) {
      s += run.success_rate;
      for (const auto& e : run.episodes) {
        n += e.result.nds;
        d += e.result.ds;
        r += e.result.rc;
        km += e.result.km_driven;
        for (std::size_t k = 0; k < counts.size(); ++k) counts[k] += e.result.counts[k];
        ++episodes;
      }
    }
    const auto m = static_cast<double>(episodes);
    nds.push_back(n / m);
    ds.push_back(d / m);
    rc.push_back(r / m);
    sr.push_back(s / static_cast<double>(runs.size()));
    for (std::size_t k = 0; k < counts.size(); ++k) kinds[k].push_back(per_km(counts[k], km));
    using sim::InfractionKind;
    cv.push_back(kinds[static_cast<std::size_t>(InfractionKind::CollisionVehicle)].back());
    cl.push_back(kinds[static_cast<std::size_t>(InfractionKind::CollisionStatic)].back());
    st.push_back(kinds[static_cast<std::size_t>(InfractionKind::ScenarioTimeout)].back());
  }
  CellStats c;
  c.trained = trained;
  c.nds = metrics::summarize(nds);
  c.ds = metrics::summarize(ds);
  c.rc = metrics::summarize(rc);
  c.sr = metrics::summarize(sr);
  c.cv = metrics::summarize(cv);
  c.cl = metrics::summarize(cl);
  c.st = metrics::summarize(st);
  for (std::size_t k = 0; k < kinds.size(); ++k) c.per_kind[k] = metrics::summarize(kinds[k]);
  return c;
}

json summary_json(const metrics::Summary& s) { return {{"mean", s.mean}, {"std", s.std}}; }

std::string pm(const metrics::Summary& s, double scale, int precision) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(precision);
  os << s.mean * scale << " ± " << s.std * scale;
  return os.str();
}

}  // namespace

json to_json(const AblationTable& t) {
  json cells = json::array();
  for (const auto& cell : t.cells) {
    const auto s = cell_stats(cell);
    json per_kind = json::object();
    for (auto k : sim::kAllInfractionKinds) per_kind[std::string(sim::to_string(k))] = summary_json(s.per_kind[static_cast<std::size_t>(k)]);
    json runs = json::array();
    for (const auto& seed_runs : cell.runs) {
      json r = json::array();
      for (const auto& run : seed_runs) r.push_back(to_json(run));
      runs.push_back(r);
    }
    cells.push_back({{"head", to_string(cell.head)},
                     {"generator", model::to_string(cell.generator)},
                     {"trained", s.trained},
                     {"nds", summary_json(s.nds)},
                     {"ds", summary_json(s.ds)},
                     {"rc", summary_json(s.rc)},
                     {"success_rate", summary_json(s.sr)},
                     {"cv_per_km", summary_json(s.cv)},
                     {"cl_per_km", summary_json(s.cl)},
                     {"st_per_km", summary_json(s.st)},
                     {"infractions_per_km", per_kind},
                     {"val_ade", cell.val_ade},
                     {"errors", cell.errors},
                     {"runs", runs}});
  }
  return {{"cells", cells}};
}

std::string to_markdown(const AblationTable& t) {
  std::ostringstream os;
  const std::array<HeadKind, 3> heads = {HeadKind::WPS, HeadKind::PATH, HeadKind::PathWaypoints};
  auto find = [&](HeadKind h, model::Generator g) -> const AblationCell* {
    for (const auto& c : t.cells) {
      if (c.head == h && c.generator == g) return &c;
    }
    return nullptr;
  };
  os << "| Normalized DS | WPS | PATH | P+WP |\n|---|---|---|---|\n";
  for (auto g : {model::Generator::SingleTokenGRU, model::Generator::MultiTokenGRU, model::Generator::MultiTokenLinear}) {
    os << "| " << model::to_string(g);
    for (auto h : heads) {
      const auto* c = find(h, g);
      os << " | " << (c && cell_stats(*c).trained > 0 ? pm(cell_stats(*c).nds, 100.0, 1) : "n/a");
    }
    os << " |\n";
  }
  os << "\n| Method | NDS | DS | RC | SR | CV/km | CL/km | ST/km |\n|---|---|---|---|---|---|---|---|\n";
  for (auto g : {model::Generator::SingleTokenGRU, model::Generator::MultiTokenGRU, model::Generator::MultiTokenLinear}) {
    for (auto h : heads) {
      const auto* c = find(h, g);
      if (!c) continue;
      const auto s = cell_stats(*c);
      os << "| " << to_string(h) << " " << model::to_string(g);
      if (s.trained == 0) {
        os << " | failed | | | | | | |\n";
        continue;
      }
      os << " | " << pm(s.nds, 100.0, 1) << " | " << pm(s.ds, 100.0, 1) << " | " << pm(s.rc, 100.0, 1) << " | "
         << pm(s.sr, 100.0, 1) << " | " << pm(s.cv, 1.0, 2) << " | " << pm(s.cl, 1.0, 2) << " | " << pm(s.st, 1.0, 2)
         << " |\n";
    }
  }
  for (const auto& c : t.cells) {
    for (const auto& e : c.errors) os << "\n- " << e;
  }
  return os.str();
}

}  // namespace plancraft::run
