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
 * @file evaluation.hpp
 * @brief Accuracy, positioning-error statistics, threshold pass ratios,
 *        FLOP accounting and the experiment harness that ties them together.
 */
#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "phasefix/ambiguity_net.hpp"
#include "phasefix/core.hpp"
#include "phasefix/geometry.hpp"
#include "phasefix/hyperbola_solver.hpp"
#include "phasefix/simulator.hpp"

namespace phasefix {

// ----------------------------------------------------------------------------
// Metrics
// ----------------------------------------------------------------------------

/// Exact-vector accuracy in percent: a sample counts only when every branch matches.
inline double overall_accuracy(const std::vector<std::vector<std::int64_t>>& predictions,
                               const std::vector<std::vector<std::int64_t>>& labels) {
  if (predictions.size() != labels.size())
    throw LengthMismatch("overall_accuracy: " + std::to_string(predictions.size()) + " predictions vs " +
                         std::to_string(labels.size()) + " labels");
  if (predictions.empty()) throw EmptyInput("overall_accuracy: no samples");
  std::size_t hits = 0;
  for (std::size_t s = 0; s < labels.size(); ++s) {
    if (predictions[s].size() != labels[s].size())
      throw LengthMismatch("overall_accuracy: branch count differs at sample " + std::to_string(s));
    hits += predictions[s] == labels[s] ? 1 : 0;
  }
  return 100.0 * static_cast<double>(hits) / static_cast<double>(labels.size());
}

inline std::vector<double> positioning_errors(const std::vector<SolverResult>& results,
                                              const std::vector<Vec2>& truths) {
  if (results.size() != truths.size()) throw LengthMismatch("positioning_errors: length mismatch");
  if (results.empty()) throw EmptyInput("positioning_errors: no samples");
  std::vector<double> out(results.size());
  for (std::size_t i = 0; i < results.size(); ++i) out[i] = (results[i].position - truths[i]).norm();
  return out;
}

struct EcdfPoint {
  double error;
  double cdf;
};

/// Empirical CDF at each distinct error value: fraction of samples <= value.
inline std::vector<EcdfPoint> ecdf(std::vector<double> errors) {
  if (errors.empty()) throw EmptyInput("ecdf: no samples");
  std::sort(errors.begin(), errors.end());
  const auto n = static_cast<double>(errors.size());
  std::vector<EcdfPoint> out;
  for (std::size_t i = 0; i < errors.size(); ++i) {
    if (i + 1 < errors.size() && errors[i + 1] == errors[i]) continue;
    out.push_back({errors[i], static_cast<double>(i + 1) / n});
  }
  return out;
}

/// Nearest-rank percentile: the ceil(p S / 100)-th order statistic.
inline double percentile(std::vector<double> errors, double p) {
  if (errors.empty()) throw EmptyInput("percentile: no samples");
  if (!(p >= 0.0 && p <= 100.0)) throw InvalidArgument("percentile: p must lie in [0, 100]");
  std::sort(errors.begin(), errors.end());
  const auto s = static_cast<double>(errors.size());
  auto rank = static_cast<std::size_t>(std::ceil(p * s / 100.0 - 1e-12));
  rank = std::clamp<std::size_t>(rank, 1, errors.size());
  return errors[rank - 1];
}

/// Percentage of results with final cost <= tau.
inline double failure_pass_ratio(const std::vector<SolverResult>& results, double tau) {
  if (results.empty()) throw EmptyInput("failure_pass_ratio: no samples");
  const auto pass = std::count_if(results.begin(), results.end(),
                                  [tau](const SolverResult& r) { return r.final_cost <= tau; });
  return 100.0 * static_cast<double>(pass) / static_cast<double>(results.size());
}

// ----------------------------------------------------------------------------
// Complexity
// ----------------------------------------------------------------------------

struct FlopCount {
  std::int64_t nn = 0;
  std::int64_t gd = 0;
  std::int64_t total() const { return nn + gd; }
};

/// Closed-form estimate D^2 (4|J| + 16) + D (2Q + 4I).
inline std::int64_t flops_nn(std::int64_t width, std::int64_t branches, std::int64_t total_classes,
                             std::int64_t num_aps) {
  if (width < 1 || branches < 1 || total_classes < 1 || num_aps < 1)
    throw InvalidArgument("flops_nn: arguments must be positive");
  return width * width * (4 * branches + 16) + width * (2 * total_classes + 4 * num_aps);
}

/// T (18|J| + 10): distances 6|J|+6, differences |J|, residuals |J|,
/// gradient 10|J|, update 4.
inline std::int64_t flops_gd(std::int64_t iterations, std::int64_t branches) {
  if (iterations < 1 || branches < 1) throw InvalidArgument("flops_gd: arguments must be positive");
  return iterations * (18 * branches + 10);
}

/// 2 n_out n_in per dense layer of the actual architecture.
inline std::int64_t flops_model(const MlpConfig& c) {
  c.validate();
  const std::int64_t D = c.width;
  std::int64_t f = 2 * D * c.encoded_dim() + (c.shared_layers - 1) * 2 * D * D;
  for (int k = 0; k < c.num_branches(); ++k)
    f += c.branch_hidden_layers * 2 * D * D + 2 * static_cast<std::int64_t>(c.branch_outputs(k)) * D;
  return f;
}

// ----------------------------------------------------------------------------
// Experiment harness
// ----------------------------------------------------------------------------

/// A test set in which exactly `forced_failure_count` APs fail per sample.
struct FailureTestSpec {
  int forced_failure_count = 0;

  std::string name() const {
    switch (forced_failure_count) {
      case 0: return "No failure";
      case 1: return "1 failure";
      default: return std::to_string(forced_failure_count) + " failures";
    }
  }
};

struct ModelKey {
  double tx_power_dbm;
  double p_f;
  auto operator<=>(const ModelKey&) const = default;
};

using ModelStore = std::map<ModelKey, MlpModel>;

struct ExperimentSpec {
  Deployment deployment;
  RadioConfig radio;  // tx_power_dbm is overridden per cell
  std::vector<ModelKey> cells;
  std::vector<FailureTestSpec> failure_tests{{0}, {1}, {2}, {3}};
  std::int64_t test_samples = 100'000;
  std::uint64_t seed = 0;
  SolverConfig solver;
  std::vector<double> percentiles{50.0, 67.0, 90.0, 95.0, 99.0};
  unsigned threads = 1;
  /// Substitute ground-truth labels for the network's prediction.
  bool oracle_labels = false;
};

struct EvalReport {
  nlohmann::json config;
  double tx_power_dbm = 0.0;
  double p_f = 0.0;
  std::int64_t samples = 0;
  double accuracy_pct = 0.0;
  std::map<double, double> error_percentiles_m;
  std::vector<EcdfPoint> ecdf;
  double pass_pct = 0.0;  // on the nominal (p_f-drawn) test set
  std::vector<std::pair<std::string, double>> failure_pass_pct;  // per forced-failure test set
  FlopCount flops;
};

/// Same sample stream for any radio setting, so cells differ only in the
/// quantity being swept.
inline Dataset generate_test_set(const Deployment& dep, const RadioConfig& radio,
                                 const FailurePolicy& policy, std::int64_t count, std::uint64_t seed,
                                 unsigned threads) {
  if (count < 1) throw EmptyInput("test set: S must be >= 1");
  Dataset ds;
  ds.deployment = dep;
  ds.radio = radio;
  ds.p_f = policy.p_f;
  ds.split = Split::kTest;
  ds.root_seed = seed;
  ds.samples.resize(static_cast<std::size_t>(count));
  const std::uint64_t root =
      policy.forced_count < 0 ? derive_seed(seed, Stream::kTest, 0)
                              : derive_seed(seed, Stream::kFailureTest, static_cast<std::uint64_t>(policy.forced_count));
  parallel_for(ds.samples.size(), threads, [&](std::size_t i) {
    Rng rng(derive_seed(root, Stream::kTest, i));
    ds.samples[i] = generate_sample(dep, radio, policy, rng);
  });
  return ds;
}

struct PipelineOutput {
  std::vector<std::vector<std::int64_t>> predictions;
  std::vector<SolverResult> results;
};

/// Ambiguity estimation followed by GD positioning for every sample.
inline PipelineOutput run_pipeline(const MlpModel* model, const Dataset& ds, const SolverConfig& solver,
                                   std::uint64_t seed, unsigned threads, bool oracle_labels) {
  PipelineOutput out;
  const auto n = ds.size();
  const auto& dep = ds.deployment;
  if (oracle_labels) {
    for (const auto& s : ds.samples) out.predictions.push_back(s.labels);
  } else {
    if (model == nullptr) throw MissingModel("run_pipeline: no model supplied");
    out.predictions.resize(n);
    constexpr std::size_t kChunk = 2000;
    const std::size_t chunks = (n + kChunk - 1) / kChunk;
    parallel_for(chunks, threads, [&](std::size_t c) {
      FlushDenormals ftz;
      const std::size_t begin = c * kChunk;
      const std::size_t len = std::min(kChunk, n - begin);
      Eigen::MatrixXd delta(dep.num_diffs(), static_cast<Eigen::Index>(len));
      for (std::size_t i = 0; i < len; ++i)
        for (int r = 0; r < dep.num_diffs(); ++r) delta(r, static_cast<Eigen::Index>(i)) = ds.samples[begin + i].delta[r];
      auto pred = model->predict_batch(delta);
      for (std::size_t i = 0; i < len; ++i) out.predictions[begin + i] = std::move(pred[i]);
    });
  }
  out.results.resize(n);
  parallel_for(n, threads, [&](std::size_t i) {
    out.results[i] = solve(ds.samples[i].delta, out.predictions[i], dep, solver,
                           derive_seed(seed, Stream::kSolver, i));
  });
  return out;
}

inline nlohmann::json experiment_config_json(const ExperimentSpec& spec, double tx, double pf) {
  return {{"deployment", deployment_to_json(spec.deployment)},
          {"radio", radio_to_json(spec.radio)},
          {"tx_power_dbm", tx},
          {"p_f", pf},
          {"test_samples", spec.test_samples},
          {"seed", spec.seed},
          {"solver",
           {{"iterations", spec.solver.iterations},
            {"learning_rate", spec.solver.learning_rate},
            {"threshold", spec.solver.threshold},
            {"restarts", spec.solver.restarts},
            {"singularity_guard", spec.solver.singularity_guard}}},
          {"oracle_labels", spec.oracle_labels}};
}

/**
 * Evaluates every (P_T, p_f) cell in order: accuracy, positioning errors and pass
 * ratio on a p_f-drawn test set, plus pass ratios on forced-failure sets.
 * Test sets depend only on (seed, cell radio, failure policy).
 */
inline std::vector<EvalReport> run_experiment(const ExperimentSpec& spec, const ModelStore& models,
                                              const std::function<void(const std::string&)>& log = {}) {
  if (spec.test_samples < 1) throw EmptyInput("run_experiment: S must be >= 1");
  spec.deployment.validate();
  if (spec.cells.empty()) throw EmptyInput("run_experiment: no cells");
  std::vector<EvalReport> reports;
  for (const auto& cell : spec.cells) {
    {
      const double tx = cell.tx_power_dbm;
      const double pf = cell.p_f;
      const MlpModel* model = nullptr;
      if (!spec.oracle_labels) {
        const auto it = models.find(ModelKey{tx, pf});
        if (it == models.end())
          throw MissingModel("run_experiment: no model for P_T=" + format_double(tx) +
                             " dBm, p_f=" + format_double(pf));
        model = &it->second;
      }
      RadioConfig radio = spec.radio;
      radio.tx_power_dbm = tx;

      EvalReport rep;
      rep.config = experiment_config_json(spec, tx, pf);
      rep.tx_power_dbm = tx;
      rep.p_f = pf;
      rep.samples = spec.test_samples;

      const auto test = generate_test_set(spec.deployment, radio, FailurePolicy{pf, -1}, spec.test_samples,
                                          spec.seed, spec.threads);
      const auto out = run_pipeline(model, test, spec.solver, spec.seed, spec.threads, spec.oracle_labels);
      std::vector<std::vector<std::int64_t>> labels;
      std::vector<Vec2> truths;
      for (const auto& s : test.samples) {
        labels.push_back(s.labels);
        truths.push_back(s.ground_truth.ue);
      }
      rep.accuracy_pct = overall_accuracy(out.predictions, labels);
      const auto errors = positioning_errors(out.results, truths);
      for (double p : spec.percentiles) rep.error_percentiles_m[p] = percentile(errors, p);
      rep.ecdf = ecdf(errors);
      rep.pass_pct = failure_pass_ratio(out.results, spec.solver.threshold);

      for (const auto& ft : spec.failure_tests) {
        const auto fset = generate_test_set(spec.deployment, radio, FailurePolicy{0.0, ft.forced_failure_count},
                                            spec.test_samples, spec.seed, spec.threads);
        const auto fout = run_pipeline(model, fset, spec.solver, spec.seed, spec.threads, spec.oracle_labels);
        rep.failure_pass_pct.emplace_back(ft.name(), failure_pass_ratio(fout.results, spec.solver.threshold));
      }
      if (model) {
        const auto& c = model->config();
        rep.flops.nn = flops_nn(c.width, c.num_branches(), ambiguity_bounds(spec.deployment).total,
                                spec.deployment.num_aps());
      }
      rep.flops.gd = flops_gd(spec.solver.iterations, spec.deployment.num_branches());
      if (log)
        log("P_T=" + format_double(tx) + " dBm p_f=" + format_double(pf) + ": A_o=" +
            format_double(rep.accuracy_pct) + "% p95=" + format_double(rep.error_percentiles_m.count(95.0) ? rep.error_percentiles_m[95.0] : 0.0) + " m");
      reports.push_back(std::move(rep));
    }
  }
  return reports;
}

// ----------------------------------------------------------------------------
// Report files
// ----------------------------------------------------------------------------

inline std::string format_fixed(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

inline std::string cell_tag(double tx, double pf) {
  return "pt" + format_double(tx) + "dBm_pf" + format_double(pf);
}

namespace detail {

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

/// Writes `rows` as CSV and as a JSON array of objects with the same keys.
inline void write_table(const std::filesystem::path& dir, const std::string& stem,
                        const std::vector<std::string>& columns,
                        const std::vector<std::vector<nlohmann::json>>& rows) {
  std::string csv;
  for (std::size_t c = 0; c < columns.size(); ++c) csv += (c ? "," : "") + columns[c];
  csv += '\n';
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& row : rows) {
    nlohmann::json obj = nlohmann::json::object();
    for (std::size_t c = 0; c < columns.size(); ++c) {
      const auto& v = row[c];
      std::string cell;
      if (v.is_string()) {
        cell = v.get<std::string>();
        obj[columns[c]] = cell;
      } else {
        cell = format_fixed(v.get<double>());
        obj[columns[c]] = std::stod(cell);
      }
      csv += (c ? "," : "") + cell;
    }
    csv += '\n';
    arr.push_back(obj);
  }
  write_text(dir / (stem + ".csv"), csv);
  write_text(dir / (stem + ".json"), arr.dump(2) + "\n");
}

}  // namespace detail

/// table1.csv, table2.csv, table3.csv, ecdf_<cell>.csv and JSON mirrors.
inline void write_reports(const std::vector<EvalReport>& reports, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<std::vector<nlohmann::json>> t1, t2, t3;
  for (const auto& r : reports) {
    t1.push_back({r.p_f, r.tx_power_dbm, r.accuracy_pct});
    const auto it = r.error_percentiles_m.find(95.0);
    if (it == r.error_percentiles_m.end()) throw InvalidArgument("write_reports: p95 not among the recorded percentiles");
    const double p95 = it->second;
    t2.push_back({"proposed", r.p_f, r.tx_power_dbm, 100.0 * p95});
  }
  for (const auto& r : reports)
    for (const auto& [name, pct] : r.failure_pass_pct) t3.push_back({name, r.p_f, r.tx_power_dbm, pct});
  detail::write_table(dir, "table1", {"p_f", "P_T_dBm", "accuracy_pct"}, t1);
  detail::write_table(dir, "table2", {"approach", "p_f", "P_T_dBm", "p95_cm"}, t2);
  detail::write_table(dir, "table3", {"testset", "p_f_train", "P_T_dBm", "pass_pct"}, t3);

  for (const auto& r : reports) {
    std::string csv = "error_m,cdf\n";
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& p : r.ecdf) {
      csv += format_double(p.error) + "," + format_double(p.cdf) + "\n";
      arr.push_back({{"error_m", p.error}, {"cdf", p.cdf}});
    }
    const auto stem = "ecdf_" + cell_tag(r.tx_power_dbm, r.p_f);
    detail::write_text(dir / (stem + ".csv"), csv);
    detail::write_text(dir / (stem + ".json"), arr.dump() + "\n");
  }

  nlohmann::json summary = nlohmann::json::array();
  for (const auto& r : reports) {
    nlohmann::json pct = nlohmann::json::object();
    for (const auto& [p, v] : r.error_percentiles_m) pct[format_double(p)] = v;
    nlohmann::json fail = nlohmann::json::object();
    for (const auto& [name, v] : r.failure_pass_pct) fail[name] = v;
    summary.push_back({{"config", r.config},
                       {"samples", r.samples},
                       {"accuracy_pct", r.accuracy_pct},
                       {"error_percentiles_m", pct},
                       {"pass_pct", r.pass_pct},
                       {"failure_pass_pct", fail},
                       {"flops", {{"nn", r.flops.nn}, {"gd", r.flops.gd}, {"total", r.flops.total()}}}});
  }
  detail::write_text(dir / "report.json", summary.dump(2) + "\n");
}

}  // namespace phasefix
