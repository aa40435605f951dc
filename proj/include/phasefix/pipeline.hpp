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

/**
 * @file pipeline.hpp
 * @brief Config-driven pipeline stages and the on-disk layout of a run.
 *
 * Layout under output_dir:
 *
 *   deployment.json
 *   data/<split>_<cell>.csv (+ .meta.json)
 *   models/model_<cell>.json, models/history_<cell>.csv
 *   reports/table{1,2,3}.{csv,json}, reports/ecdf_<cell>.{csv,json}
 *   manifest.json
 *
 * A cell is one (P_T, p_f) pair. All cells share the deployment and the
 * per-split sample streams, so they differ only in the swept quantity.
 */
#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "phasefix/ambiguity_net.hpp"
#include "phasefix/config.hpp"
#include "phasefix/core.hpp"
#include "phasefix/evaluation.hpp"
#include "phasefix/geometry.hpp"
#include "phasefix/simulator.hpp"

namespace phasefix {

using LogFn = std::function<void(const std::string&)>;

struct RunPaths {
  std::filesystem::path root;

  std::filesystem::path deployment() const { return root / "deployment.json"; }
  std::filesystem::path manifest() const { return root / "manifest.json"; }
  std::filesystem::path dataset(Split s, const ModelKey& k) const {
    return root / "data" / (to_string(s) + "_" + cell_tag(k.tx_power_dbm, k.p_f) + ".csv");
  }
  std::filesystem::path model(const ModelKey& k) const {
    return root / "models" / ("model_" + cell_tag(k.tx_power_dbm, k.p_f) + ".json");
  }
  std::filesystem::path history(const ModelKey& k) const {
    return root / "models" / ("history_" + cell_tag(k.tx_power_dbm, k.p_f) + ".csv");
  }
  std::filesystem::path reports() const { return root / "reports"; }
};

inline std::vector<ModelKey> evaluation_cells(const RunConfig& c) {
  if (!c.evaluation.cells.empty()) return c.evaluation.cells;
  std::vector<ModelKey> cells;
  for (double pf : c.evaluation.failure_probs)
    for (double tx : c.evaluation.tx_powers_dbm) cells.push_back({tx, pf});
  return cells;
}

inline Deployment make_deployment(const RunConfig& c) {
  auto dep = deploy_aps(c.deployment.region, c.deployment.num_aps, c.deployment.min_separation,
                        derive_seed(c.seed, Stream::kDeployment, 0), c.radio.wavelength());
  if (!c.deployment.j_set.empty()) dep.j_set = c.deployment.j_set;
  dep.validate();
  return dep;
}

inline void write_json_file(const std::filesystem::path& path, const nlohmann::json& j) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifact("missing artifact " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(path.string() + ": " + e.what());
  }
}

inline Deployment load_deployment(const RunPaths& paths) {
  return deployment_from_json(read_json_file(paths.deployment()));
}

/// Deployment on disk must match what the config would build.
inline Deployment load_checked_deployment(const RunConfig& c, const RunPaths& paths) {
  auto dep = load_deployment(paths);
  if (!(dep == make_deployment(c)))
    throw ConfigMismatch(paths.deployment().string() + " was not produced by this config and seed");
  return dep;
}

inline RadioConfig cell_radio(const RunConfig& c, const ModelKey& k) {
  RadioConfig r = c.radio;
  r.tx_power_dbm = k.tx_power_dbm;
  return r;
}

inline std::int64_t split_count(const RunConfig& c, Split s) {
  switch (s) {
    case Split::kTrain: return c.data.train_samples;
    case Split::kValidation: return c.data.val_samples;
    default: return c.data.test_samples;
  }
}

inline Dataset make_dataset(const RunConfig& c, const Deployment& dep, Split s, const ModelKey& k,
                            unsigned threads) {
  return generate_dataset(dep, cell_radio(c, k), k.p_f, split_count(c, s), s, c.seed, threads);
}

/// Reads the dataset file when present and consistent, otherwise regenerates it.
inline Dataset obtain_dataset(const RunConfig& c, const RunPaths& paths, const Deployment& dep, Split s,
                              const ModelKey& k, unsigned threads) {
  const auto path = paths.dataset(s, k);
  if (std::filesystem::exists(path)) {
    auto ds = read_dataset(path);
    if (!(ds.deployment == dep) || ds.p_f != k.p_f || ds.root_seed != c.seed ||
        static_cast<std::int64_t>(ds.size()) != split_count(c, s) ||
        ds.radio.tx_power_dbm != k.tx_power_dbm)
      throw ConfigMismatch(path.string() + " does not match the config");
    return ds;
  }
  return make_dataset(c, dep, s, k, threads);
}

inline void write_history_csv(const std::vector<EpochRecord>& history, const std::filesystem::path& path) {
  std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string());
  out << "epoch,train_loss,val_loss,val_accuracy_pct\n";
  for (const auto& r : history)
    out << r.epoch << ',' << format_double(r.train_loss) << ',' << format_double(r.val_loss) << ','
        << format_double(r.val_accuracy) << '\n';
}

struct TrainOutcome {
  MlpModel model;
  std::vector<EpochRecord> history;
};

/// Initialization, shuffling and dropout seeds are shared by every cell.
inline TrainOutcome train_cell(const RunConfig& c, const RunPaths& paths, const Deployment& dep, const ModelKey& k,
                               unsigned threads, const LogFn& log = {}) {
  const auto train_set = obtain_dataset(c, paths, dep, Split::kTrain, k, threads);
  const auto val_set = obtain_dataset(c, paths, dep, Split::kValidation, k, threads);
  const auto cfg = mlp_config_for(dep, c.model);
  auto model = MlpModel::initialized(cfg, derive_seed(c.seed, Stream::kInit, 0));
  TrainOutcome out{model, {}};
  out.model = train(std::move(model), to_tensors(train_set, cfg), to_tensors(val_set, cfg), c.training,
                    derive_seed(c.seed, Stream::kShuffle, 0), &out.history, [&](const EpochRecord& r) {
                      if (log)
                        log(cell_tag(k.tx_power_dbm, k.p_f) + " epoch " + std::to_string(r.epoch) +
                            " train_loss=" + format_double(r.train_loss) + " val_loss=" +
                            format_double(r.val_loss) + " val_acc=" + format_double(r.val_accuracy) + "%");
                    });
  return out;
}

inline void save_trained(const TrainOutcome& t, const RunPaths& paths, const ModelKey& k) {
  std::filesystem::create_directories(paths.model(k).parent_path());
  save_model(t.model, paths.model(k));
  write_history_csv(t.history, paths.history(k));
}

inline ModelStore load_models(const RunConfig& c, const RunPaths& paths, const Deployment& dep) {
  ModelStore store;
  const auto expected = mlp_config_for(dep, c.model);
  for (const auto& k : evaluation_cells(c)) {
    const auto path = paths.model(k);
    if (!std::filesystem::exists(path)) throw MissingArtifact("missing model " + path.string());
    auto m = load_model<float>(path);
    if (!(m.config() == expected)) throw ConfigMismatch(path.string() + " does not match the config");
    store.emplace(k, std::move(m));
  }
  return store;
}

inline ExperimentSpec experiment_spec(const RunConfig& c, const Deployment& dep, unsigned threads) {
  ExperimentSpec spec;
  spec.deployment = dep;
  spec.radio = c.radio;
  spec.cells = evaluation_cells(c);
  spec.failure_tests.clear();
  for (int f : c.evaluation.forced_failures) spec.failure_tests.push_back({f});
  spec.test_samples = c.data.test_samples;
  spec.seed = c.seed;
  spec.solver = c.solver;
  spec.percentiles = c.evaluation.percentiles;
  spec.threads = threads;
  return spec;
}

/// deploy, train every evaluation cell, evaluate; returns the reports.
inline std::vector<EvalReport> run_all(const RunConfig& c, const LogFn& log = {}) {
  const RunPaths paths{c.output_dir};
  const unsigned threads = c.resolved_threads();
  const auto dep = make_deployment(c);
  write_json_file(paths.deployment(), deployment_to_json(dep));
  ModelStore store;
  for (const auto& k : evaluation_cells(c)) {
    auto t = train_cell(c, paths, dep, k, threads, log);
    save_trained(t, paths, k);
    store.emplace(k, std::move(t.model));
  }
  auto reports = run_experiment(experiment_spec(c, dep, threads), store, log);
  write_reports(reports, paths.reports());
  return reports;
}

}  // namespace phasefix
