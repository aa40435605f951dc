/*
 * Copyright (c) 2026 The phasefix Authors.
 * SPDX-License-Identifier: Apache-2.0
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// phasefix command-line driver.
//
// Exit codes: 0 success, 1 configuration error, 2 runtime error.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "phasefix/ambiguity_net.hpp"
#include "phasefix/config.hpp"
#include "phasefix/evaluation.hpp"
#include "phasefix/hyperbola_solver.hpp"
#include "phasefix/pipeline.hpp"
#include "phasefix/simulator.hpp"

namespace {

using namespace phasefix;

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitRuntime = 2;

struct CommonOptions {
  std::string config_path;
  std::optional<unsigned> threads;
  std::optional<std::string> output_dir;
};

struct CellOptions {
  std::optional<double> tx_power_dbm;
  std::optional<double> p_f;
  bool all_cells = false;
};

void add_common(CLI::App* app, CommonOptions& o) {
  app->add_option("-c,--config", o.config_path, "TOML run configuration")->required();
  app->add_option("--threads", o.threads, "worker threads (0: all cores)");
  app->add_option("-o,--output", o.output_dir, "output directory (overrides output_dir)");
}

void add_cell(CLI::App* app, CellOptions& o, bool allow_all) {
  app->add_option("--tx-power", o.tx_power_dbm, "transmit power [dBm] (default: radio.tx_power_dbm)");
  app->add_option("--p-f", o.p_f, "AP failure probability (default: data.p_f)");
  if (allow_all) app->add_flag("--all-cells", o.all_cells, "every evaluation cell");
}

RunConfig resolve_config(const CommonOptions& o) {
  RunConfig c = load_config(o.config_path);
  apply_seed_env(c);
  if (o.threads) c.threads = *o.threads;
  if (o.output_dir) c.output_dir = *o.output_dir;
  return c;
}

std::vector<ModelKey> selected_cells(const RunConfig& c, const CellOptions& o) {
  if (o.all_cells) {
    if (o.tx_power_dbm || o.p_f) throw ConfigParseError("--all-cells", 0, "cannot be combined with --tx-power/--p-f");
    return evaluation_cells(c);
  }
  const ModelKey k{o.tx_power_dbm.value_or(c.radio.tx_power_dbm), o.p_f.value_or(c.data.p_f)};
  if (!(k.p_f >= 0.0 && k.p_f <= 1.0)) throw ConfigParseError("--p-f", 0, "must lie in [0, 1]");
  return {k};
}

void log_line(const std::string& s) { std::cerr << s << std::endl; }

/// manifest.json: subcommand, resolved config and produced artifacts.
void write_manifest(const RunConfig& c, const std::string& command, const nlohmann::json& extra) {
  const RunPaths paths{c.output_dir};
  nlohmann::json m = {{"tool", "phasefix"},
                      {"command", command},
                      {"config", config_to_json(c)},
                      {"seed_from_env", std::getenv("PHASEFIX_SEED") != nullptr}};
  m.update(extra);
  write_json_file(paths.manifest(), m);
}

std::vector<double> parse_list(const std::string& s, const std::string& what) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigParseError(what, 0, "not a number: '" + item + "'");
    }
  }
  return out;
}

nlohmann::json rel_paths(const RunConfig& c, const std::vector<std::filesystem::path>& files) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& f : files) arr.push_back(std::filesystem::relative(f, c.output_dir).generic_string());
  return arr;
}

int cmd_deploy(const CommonOptions& o) {
  const auto c = resolve_config(o);
  const RunPaths paths{c.output_dir};
  const auto dep = make_deployment(c);
  write_json_file(paths.deployment(), deployment_to_json(dep));
  const auto b = ambiguity_bounds(dep);
  write_manifest(c, "deploy", {{"outputs", rel_paths(c, {paths.deployment()})}, {"total_classes", b.total}});
  std::cout << "deployment: " << dep.num_aps() << " APs, |J|=" << dep.num_branches() << ", Q=" << b.total
            << " -> " << paths.deployment().string() << '\n';
  return kExitOk;
}

int cmd_gendata(const CommonOptions& o, const CellOptions& co, const std::string& split_name) {
  const auto c = resolve_config(o);
  Split split;
  try {
    split = split_from_string(split_name);
  } catch (const Error& e) {
    throw ConfigParseError("--split", 0, e.what());
  }
  const auto cells = selected_cells(c, co);
  const RunPaths paths{c.output_dir};
  const auto dep = load_checked_deployment(c, paths);
  std::vector<std::filesystem::path> outputs;
  for (const auto& k : cells) {
    const auto ds = make_dataset(c, dep, split, k, c.resolved_threads());
    const auto path = paths.dataset(split, k);
    std::filesystem::create_directories(path.parent_path());
    write_dataset(ds, path);
    outputs.push_back(path);
    std::cout << to_string(split) << ": " << ds.size() << " samples -> " << path.string() << '\n';
  }
  write_manifest(c, "gendata", {{"split", to_string(split)}, {"outputs", rel_paths(c, outputs)}});
  return kExitOk;
}

int cmd_train(const CommonOptions& o, const CellOptions& co, std::optional<int> epochs) {
  auto c = resolve_config(o);
  if (epochs) {
    if (*epochs < 0) throw ConfigParseError("--epochs", 0, "must be >= 0");
    c.training.epochs = *epochs;
  }
  const auto cells = selected_cells(c, co);
  const RunPaths paths{c.output_dir};
  const auto dep = load_checked_deployment(c, paths);
  std::vector<std::filesystem::path> outputs;
  nlohmann::json summary = nlohmann::json::array();
  for (const auto& k : cells) {
    const auto t = train_cell(c, paths, dep, k, c.resolved_threads(), log_line);
    save_trained(t, paths, k);
    outputs.push_back(paths.model(k));
    outputs.push_back(paths.history(k));
    const auto& md = t.model.metadata();
    summary.push_back({{"cell", cell_tag(k.tx_power_dbm, k.p_f)},
                       {"epochs_seen", md.epochs_seen},
                       {"best_epoch", md.best_epoch}});
    std::cout << "model -> " << paths.model(k).string() << '\n';
  }
  write_manifest(c, "train", {{"outputs", rel_paths(c, outputs)}, {"models", summary}});
  return kExitOk;
}

int cmd_eval(const CommonOptions& o, std::optional<std::int64_t> samples) {
  auto c = resolve_config(o);
  if (samples) {
    if (*samples < 1) throw ConfigParseError("--samples", 0, "must be >= 1");
    c.data.test_samples = *samples;
  }
  const RunPaths paths{c.output_dir};
  const auto dep = load_checked_deployment(c, paths);
  const auto models = load_models(c, paths, dep);
  const auto reports = run_experiment(experiment_spec(c, dep, c.resolved_threads()), models, log_line);
  write_reports(reports, paths.reports());
  for (const auto& r : reports)
    std::cout << cell_tag(r.tx_power_dbm, r.p_f) << ": accuracy " << format_fixed(r.accuracy_pct, 2) << "%, p95 "
              << format_fixed(100.0 * r.error_percentiles_m.at(95.0), 3) << " cm, pass "
              << format_fixed(r.pass_pct, 2) << "%\n";
  write_manifest(c, "eval", {{"outputs", {"reports/"}}});
  return kExitOk;
}

struct PositionOptions {
  std::string delta;
  std::string labels;
  std::string truth;
  std::string model;
};

int cmd_position(const CommonOptions& o, const CellOptions& co, const PositionOptions& po) {
  const auto c = resolve_config(o);
  const RunPaths paths{c.output_dir};
  const auto dep = load_checked_deployment(c, paths);
  const auto delta = parse_list(po.delta, "--delta");
  if (static_cast<int>(delta.size()) != dep.num_diffs())
    throw ConfigParseError("--delta", 0, "expected " + std::to_string(dep.num_diffs()) + " values");

  std::vector<std::int64_t> dz;
  std::string source;
  if (!po.labels.empty()) {
    for (double v : parse_list(po.labels, "--labels")) {
      if (v != std::floor(v)) throw ConfigParseError("--labels", 0, "labels must be integers");
      dz.push_back(static_cast<std::int64_t>(v));
    }
    if (static_cast<int>(dz.size()) != dep.num_branches())
      throw ConfigParseError("--labels", 0, "expected " + std::to_string(dep.num_branches()) + " values");
    source = "given";
  } else {
    const auto k = selected_cells(c, co).front();
    const std::filesystem::path mp = po.model.empty() ? paths.model(k) : std::filesystem::path(po.model);
    if (!std::filesystem::exists(mp)) throw MissingArtifact("missing model " + mp.string());
    const auto model = load_model<float>(mp);
    if (!(model.config() == mlp_config_for(dep, c.model))) throw ConfigMismatch(mp.string() + " does not match the config");
    FlushDenormals ftz;
    dz = model.predict(delta);
    source = "model";
  }
  const auto res = solve(delta, dz, dep, c.solver, derive_seed(c.seed, Stream::kSolver, 0));
  auto j = solver_result_to_json(res);
  j["ambiguities"] = dz;
  j["ambiguity_source"] = source;
  if (!po.truth.empty()) {
    const auto t = parse_list(po.truth, "--truth");
    if (t.size() != 2) throw ConfigParseError("--truth", 0, "expected x,y");
    j["error_m"] = (res.position - Vec2(t[0], t[1])).norm();
  }
  write_json_file(paths.root / "position.json", j);
  std::cout << j.dump(2) << '\n';
  write_manifest(c, "position", {{"outputs", {"position.json"}}});
  return kExitOk;
}

int cmd_flops(const CommonOptions& o, std::optional<std::int64_t> classes) {
  const auto c = resolve_config(o);
  const RunPaths paths{c.output_dir};
  const auto dep = std::filesystem::exists(paths.deployment()) ? load_checked_deployment(c, paths) : make_deployment(c);
  const std::int64_t q = classes ? *classes : ambiguity_bounds(dep).total;
  if (q < 1) throw ConfigParseError("--classes", 0, "must be >= 1");
  FlopCount f;
  f.nn = flops_nn(c.model.width, dep.num_branches(), q, dep.num_aps());
  f.gd = flops_gd(c.solver.iterations, dep.num_branches());
  const auto exact = flops_model(mlp_config_for(dep, c.model));
  const nlohmann::json j = {{"width", c.model.width},
                            {"branches", dep.num_branches()},
                            {"total_classes", q},
                            {"num_aps", dep.num_aps()},
                            {"iterations", c.solver.iterations},
                            {"nn", f.nn},
                            {"gd", f.gd},
                            {"total", f.total()},
                            {"nn_architecture", exact}};
  write_json_file(paths.root / "flops.json", j);
  std::cout << "C_NN    " << f.nn << '\n'
            << "C_GD    " << f.gd << '\n'
            << "C_total " << f.total() << '\n'
            << "C_NN (layer-exact, Q=" << ambiguity_bounds(dep).total << ") " << exact << '\n';
  write_manifest(c, "flops", {{"outputs", {"flops.json"}}});
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"phasefix: phase-only uplink positioning"};
  app.require_subcommand(1);

  CommonOptions common;
  CellOptions cell;

  auto* deploy = app.add_subcommand("deploy", "place APs and write deployment.json");
  add_common(deploy, common);

  std::string split = "train";
  auto* gendata = app.add_subcommand("gendata", "generate a dataset split");
  add_common(gendata, common);
  add_cell(gendata, cell, true);
  gendata->add_option("--split", split, "train | val | test");

  std::optional<int> epochs;
  auto* train_cmd = app.add_subcommand("train", "train the ambiguity classifier");
  add_common(train_cmd, common);
  add_cell(train_cmd, cell, true);
  train_cmd->add_option("--epochs", epochs, "override training.epochs");

  std::optional<std::int64_t> samples;
  auto* eval = app.add_subcommand("eval", "evaluate every cell and write report tables");
  add_common(eval, common);
  eval->add_option("--samples", samples, "override data.test_samples");

  PositionOptions po;
  auto* position = app.add_subcommand("position", "position one measurement vector");
  add_common(position, common);
  add_cell(position, cell, false);
  position->add_option("--delta", po.delta, "comma-separated delta_1..delta_{I-1} [m]")->required();
  position->add_option("--labels", po.labels, "comma-separated ambiguities; bypasses the model");
  position->add_option("--truth", po.truth, "x,y of the true position, adds error_m");
  position->add_option("--model", po.model, "model file (default: the cell's model)");

  std::optional<std::int64_t> classes;
  auto* flops = app.add_subcommand("flops", "complexity summary");
  add_common(flops, common);
  flops->add_option("--classes", classes, "total class count Q (default: from the deployment)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (*deploy) return cmd_deploy(common);
    if (*gendata) return cmd_gendata(common, cell, split);
    if (*train_cmd) return cmd_train(common, cell, epochs);
    if (*eval) return cmd_eval(common, samples);
    if (*position) return cmd_position(common, cell, po);
    if (*flops) return cmd_flops(common, classes);
  } catch (const ConfigParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitRuntime;
}
