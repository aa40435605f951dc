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
 * @file config.hpp
 * @brief Run configuration: TOML schema, defaults and JSON echo.
 *
 * Schema (every key optional, unknown keys rejected):
 *
 *   seed, threads, output_dir
 *   [deployment]  region = [x_min, x_max, y_min, y_max], num_aps,
 *                 min_separation_m, j_set
 *   [radio]       carrier_freq_hz, bandwidth_hz, tx_power_dbm,
 *                 noise_psd_dbm_hz, noise_figure_db, failure_phase_model
 *   [data]        train_samples, val_samples, test_samples, p_f
 *   [model]       width, shared_layers, branch_hidden_layers, dropout,
 *                 l2, input_encoding
 *   [training]    batch_size, epochs, learning_rate, beta1, beta2, epsilon
 *   [solver]      iterations, learning_rate, threshold_m2, restarts
 *   [evaluation]  tx_powers_dbm, failure_probs, cells, forced_failures,
 *                 percentiles
 *
 * Evaluation cells are the product tx_powers_dbm x failure_probs unless
 * `cells = [[P_T, p_f], ...]` lists them explicitly.
 */
#pragma once

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <limits>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>
#include <toml.hpp>

#include "phasefix/ambiguity_net.hpp"
#include "phasefix/core.hpp"
#include "phasefix/evaluation.hpp"
#include "phasefix/geometry.hpp"
#include "phasefix/hyperbola_solver.hpp"
#include "phasefix/simulator.hpp"

namespace phasefix {

/// Config problem tied to a key; line is 0 when no source position exists.
class ConfigParseError : public Error {
 public:
  ConfigParseError(std::string field, long line, const std::string& what)
      : Error(format(field, line, what)), field_(std::move(field)), line_(line) {}

  const std::string& field() const { return field_; }
  long line() const { return line_; }

 private:
  static std::string format(const std::string& field, long line, const std::string& what) {
    std::string s = "config: " + field;
    if (line > 0) s += " (line " + std::to_string(line) + ")";
    return s + ": " + what;
  }

  std::string field_;
  long line_;
};

class MissingArtifact : public Error {
 public:
  using Error::Error;
};

struct DeploymentSettings {
  Region region;
  int num_aps = 9;
  double min_separation = 2.0;
  std::vector<int> j_set;  // empty: all non-reference APs
};

struct DataSettings {
  std::int64_t train_samples = 700'000;
  std::int64_t val_samples = 150'000;
  std::int64_t test_samples = 100'000;
  double p_f = 0.0;
};

struct EvaluationSettings {
  std::vector<double> tx_powers_dbm{-20.0, -10.0, 0.0};
  std::vector<double> failure_probs{0.0, 1e-3, 1e-2};
  std::vector<ModelKey> cells;  // overrides the product when non-empty
  std::vector<int> forced_failures{0, 1, 2, 3};
  std::vector<double> percentiles{50.0, 67.0, 90.0, 95.0, 99.0};
};

struct RunConfig {
  std::uint64_t seed = 1;
  unsigned threads = 0;  // 0: all available cores
  std::string output_dir = "runs/paper";
  DeploymentSettings deployment;
  RadioConfig radio;
  DataSettings data;
  MlpConfig model;  // input_dim, branch_q and wavelength come from the deployment
  TrainHyper training;
  SolverConfig solver;
  EvaluationSettings evaluation;

  unsigned resolved_threads() const { return threads == 0 ? default_threads() : threads; }
};

namespace detail {

/// Tracks which keys of a TOML table were consumed.
class TableReader {
 public:
  TableReader(const toml::table& t, std::string prefix) : table_(t), prefix_(std::move(prefix)) {}

  std::string path(const std::string& key) const { return prefix_.empty() ? key : prefix_ + "." + key; }

  static long line_of(const toml::node& n) { return static_cast<long>(n.source().begin.line); }

  const toml::node* find(const std::string& key) {
    seen_.insert(key);
    return table_.get(key);
  }

  template <typename T>
  void read(const std::string& key, T& out) {
    const toml::node* n = find(key);
    if (!n) return;
    out = convert<T>(*n, path(key));
  }

  template <typename T>
  void read_list(const std::string& key, std::vector<T>& out) {
    const toml::node* n = find(key);
    if (!n) return;
    const auto* arr = n->as_array();
    if (!arr) throw ConfigParseError(path(key), line_of(*n), "expected an array");
    std::vector<T> v;
    for (const auto& e : *arr) v.push_back(convert<T>(e, path(key)));
    out = std::move(v);
  }

  const toml::table* sub(const std::string& key) {
    const toml::node* n = find(key);
    if (!n) return nullptr;
    const auto* t = n->as_table();
    if (!t) throw ConfigParseError(path(key), line_of(*n), "expected a table");
    return t;
  }

  void reject_unknown() const {
    for (const auto& [k, v] : table_) {
      const std::string key(k.str());
      if (!seen_.count(key)) throw ConfigParseError(path(key), line_of(v), "unknown key");
    }
  }

 private:
  template <typename T>
  static T convert(const toml::node& n, const std::string& where) {
    if constexpr (std::is_same_v<T, bool>) {
      if (auto v = n.value_exact<bool>()) return *v;
      throw ConfigParseError(where, line_of(n), "expected a boolean");
    } else if constexpr (std::is_integral_v<T>) {
      const auto v = n.value_exact<std::int64_t>();
      if (!v) throw ConfigParseError(where, line_of(n), "expected an integer");
      if constexpr (std::is_unsigned_v<T>) {
        if (*v < 0) throw ConfigParseError(where, line_of(n), "must be non-negative");
      }
      if (!std::in_range<T>(*v)) throw ConfigParseError(where, line_of(n), "integer out of range");
      return static_cast<T>(*v);
    } else if constexpr (std::is_floating_point_v<T>) {
      if (auto v = n.value<double>()) return static_cast<T>(*v);  // integers accepted
      throw ConfigParseError(where, line_of(n), "expected a number");
    } else {
      if (auto v = n.value_exact<std::string>()) return *v;
      throw ConfigParseError(where, line_of(n), "expected a string");
    }
  }

  const toml::table& table_;
  std::string prefix_;
  std::set<std::string> seen_;
};

template <typename Fn>
void with_section(TableReader& root, const std::string& name, Fn&& fn) {
  if (const toml::table* t = root.sub(name)) {
    TableReader r(*t, name);
    fn(r);
    r.reject_unknown();
  }
}

/// Re-throws library validation failures as ConfigParseError on `section`.
template <typename Fn>
void validated(const std::string& section, Fn&& fn) {
  try {
    fn();
  } catch (const ConfigParseError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigParseError(section, 0, e.what());
  }
}

}  // namespace detail

inline void validate(const RunConfig& c) {
  detail::validated("deployment", [&] {
    c.deployment.region.validate();
    if (c.deployment.num_aps < 2) throw InvalidArgument("num_aps must be >= 2");
    if (!(c.deployment.min_separation >= 0.0)) throw InvalidArgument("min_separation_m must be >= 0");
    std::set<int> uniq;
    for (int j : c.deployment.j_set) {
      if (j < 1 || j >= c.deployment.num_aps) throw InvalidArgument("j_set entries must lie in [1, num_aps - 1]");
      if (!uniq.insert(j).second) throw InvalidArgument("j_set entries must be distinct");
    }
  });
  detail::validated("radio", [&] { c.radio.validate(); });
  detail::validated("data", [&] {
    if (c.data.train_samples < 1 || c.data.val_samples < 1 || c.data.test_samples < 1)
      throw InvalidArgument("sample counts must be >= 1");
    if (!(c.data.p_f >= 0.0 && c.data.p_f <= 1.0)) throw InvalidArgument("p_f must lie in [0, 1]");
  });
  detail::validated("model", [&] {
    MlpConfig m = c.model;
    m.branch_q = {0};
    m.validate();
  });
  detail::validated("training", [&] {
    if (c.training.batch_size < 1) throw InvalidArgument("batch_size must be >= 1");
    if (c.training.epochs < 0) throw InvalidArgument("epochs must be >= 0");
    if (!(c.training.learning_rate > 0.0)) throw InvalidArgument("learning_rate must be > 0");
  });
  detail::validated("solver", [&] { c.solver.validate(); });
  detail::validated("evaluation", [&] {
    if (c.evaluation.tx_powers_dbm.empty() || c.evaluation.failure_probs.empty())
      throw InvalidArgument("tx_powers_dbm and failure_probs must be non-empty");
    for (double p : c.evaluation.failure_probs)
      if (!(p >= 0.0 && p <= 1.0)) throw InvalidArgument("failure_probs entries must lie in [0, 1]");
    std::set<ModelKey> uniq;
    for (const auto& k : c.evaluation.cells) {
      if (!(k.p_f >= 0.0 && k.p_f <= 1.0)) throw InvalidArgument("cells p_f must lie in [0, 1]");
      if (!uniq.insert(k).second) throw InvalidArgument("cells must be distinct");
    }
    for (int f : c.evaluation.forced_failures)
      if (f < 0 || f > c.deployment.num_aps) throw InvalidArgument("forced_failures entries must lie in [0, num_aps]");
    bool has95 = false;
    for (double p : c.evaluation.percentiles) {
      if (!(p >= 0.0 && p <= 100.0)) throw InvalidArgument("percentiles must lie in [0, 100]");
      has95 = has95 || p == 95.0;
    }
    if (!has95) throw InvalidArgument("percentiles must include 95");
  });
}

inline RunConfig parse_config(const toml::table& root) {
  RunConfig c;
  detail::TableReader r(root, "");
  r.read("seed", c.seed);
  r.read("threads", c.threads);
  r.read("output_dir", c.output_dir);

  detail::with_section(r, "deployment", [&](detail::TableReader& s) {
    std::vector<double> region;
    s.read_list("region", region);
    if (!region.empty()) {
      if (region.size() != 4)
        throw ConfigParseError(s.path("region"), detail::TableReader::line_of(*s.find("region")),
                               "expected [x_min, x_max, y_min, y_max]");
      c.deployment.region = Region{region[0], region[1], region[2], region[3]};
    }
    s.read("num_aps", c.deployment.num_aps);
    s.read("min_separation_m", c.deployment.min_separation);
    s.read_list("j_set", c.deployment.j_set);
  });
  detail::with_section(r, "radio", [&](detail::TableReader& s) {
    s.read("carrier_freq_hz", c.radio.carrier_freq_hz);
    s.read("bandwidth_hz", c.radio.bandwidth_hz);
    s.read("tx_power_dbm", c.radio.tx_power_dbm);
    s.read("noise_psd_dbm_hz", c.radio.noise_psd_dbm_hz);
    s.read("noise_figure_db", c.radio.noise_figure_db);
    std::string fpm;
    s.read("failure_phase_model", fpm);
    if (!fpm.empty()) {
      try {
        c.radio.failure_phase_model = failure_phase_model_from_string(fpm);
      } catch (const Error& e) {
        throw ConfigParseError(s.path("failure_phase_model"),
                               detail::TableReader::line_of(*s.find("failure_phase_model")), e.what());
      }
    }
  });
  detail::with_section(r, "data", [&](detail::TableReader& s) {
    s.read("train_samples", c.data.train_samples);
    s.read("val_samples", c.data.val_samples);
    s.read("test_samples", c.data.test_samples);
    s.read("p_f", c.data.p_f);
  });
  detail::with_section(r, "model", [&](detail::TableReader& s) {
    s.read("width", c.model.width);
    s.read("shared_layers", c.model.shared_layers);
    s.read("branch_hidden_layers", c.model.branch_hidden_layers);
    s.read("dropout", c.model.dropout_rate);
    s.read("l2", c.model.l2_coeff);
    std::string enc;
    s.read("input_encoding", enc);
    if (!enc.empty()) {
      try {
        c.model.encoding = input_encoding_from_string(enc);
      } catch (const Error& e) {
        throw ConfigParseError(s.path("input_encoding"), detail::TableReader::line_of(*s.find("input_encoding")),
                               e.what());
      }
    }
  });
  detail::with_section(r, "training", [&](detail::TableReader& s) {
    s.read("batch_size", c.training.batch_size);
    s.read("epochs", c.training.epochs);
    s.read("learning_rate", c.training.learning_rate);
    s.read("beta1", c.training.beta1);
    s.read("beta2", c.training.beta2);
    s.read("epsilon", c.training.epsilon);
  });
  detail::with_section(r, "solver", [&](detail::TableReader& s) {
    s.read("iterations", c.solver.iterations);
    s.read("learning_rate", c.solver.learning_rate);
    s.read("threshold_m2", c.solver.threshold);
    s.read("restarts", c.solver.restarts);
  });
  detail::with_section(r, "evaluation", [&](detail::TableReader& s) {
    s.read_list("tx_powers_dbm", c.evaluation.tx_powers_dbm);
    s.read_list("failure_probs", c.evaluation.failure_probs);
    if (const toml::node* n = s.find("cells")) {
      const auto* arr = n->as_array();
      if (!arr) throw ConfigParseError(s.path("cells"), detail::TableReader::line_of(*n), "expected an array");
      for (const auto& e : *arr) {
        const auto* pair = e.as_array();
        if (!pair || pair->size() != 2 || !(*pair)[0].value<double>() || !(*pair)[1].value<double>())
          throw ConfigParseError(s.path("cells"), detail::TableReader::line_of(e), "expected [P_T_dBm, p_f] pairs");
        c.evaluation.cells.push_back({*(*pair)[0].value<double>(), *(*pair)[1].value<double>()});
      }
    }
    s.read_list("forced_failures", c.evaluation.forced_failures);
    s.read_list("percentiles", c.evaluation.percentiles);
  });
  r.reject_unknown();
  validate(c);
  return c;
}

inline RunConfig parse_config_string(std::string_view text, const std::string& source = "<string>") {
  try {
    return parse_config(toml::parse(text, source));
  } catch (const toml::parse_error& e) {
    throw ConfigParseError(std::string(e.description()), static_cast<long>(e.source().begin.line), "TOML syntax error");
  }
}

inline RunConfig load_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigParseError(path.string(), 0, "file not found");
  try {
    return parse_config(toml::parse_file(path.string()));
  } catch (const toml::parse_error& e) {
    throw ConfigParseError(std::string(e.description()), static_cast<long>(e.source().begin.line), "TOML syntax error");
  }
}

/// PHASEFIX_SEED, when set, replaces the root seed.
inline void apply_seed_env(RunConfig& c) {
  const char* env = std::getenv("PHASEFIX_SEED");
  if (env == nullptr || *env == '\0') return;
  char* end = nullptr;
  errno = 0;
  const unsigned long long v = std::strtoull(env, &end, 10);
  if (errno != 0 || end == env || *end != '\0' || env[0] == '-')
    throw ConfigParseError("PHASEFIX_SEED", 0, "not an unsigned integer: " + std::string(env));
  c.seed = v;
}

inline nlohmann::json config_to_json(const RunConfig& c) {
  const auto& d = c.deployment;
  return {{"seed", c.seed},
          {"threads", c.resolved_threads()},
          {"output_dir", c.output_dir},
          {"deployment",
           {{"region", {d.region.x_min, d.region.x_max, d.region.y_min, d.region.y_max}},
            {"num_aps", d.num_aps},
            {"min_separation_m", d.min_separation},
            {"j_set", d.j_set}}},
          {"radio", radio_to_json(c.radio)},
          {"data",
           {{"train_samples", c.data.train_samples},
            {"val_samples", c.data.val_samples},
            {"test_samples", c.data.test_samples},
            {"p_f", c.data.p_f}}},
          {"model",
           {{"width", c.model.width},
            {"shared_layers", c.model.shared_layers},
            {"branch_hidden_layers", c.model.branch_hidden_layers},
            {"dropout", c.model.dropout_rate},
            {"l2", c.model.l2_coeff},
            {"input_encoding", to_string(c.model.encoding)}}},
          {"training",
           {{"batch_size", c.training.batch_size},
            {"epochs", c.training.epochs},
            {"learning_rate", c.training.learning_rate},
            {"beta1", c.training.beta1},
            {"beta2", c.training.beta2},
            {"epsilon", c.training.epsilon}}},
          {"solver",
           {{"iterations", c.solver.iterations},
            {"learning_rate", c.solver.learning_rate},
            {"threshold_m2", c.solver.threshold},
            {"restarts", c.solver.restarts}}},
          {"evaluation",
           {{"tx_powers_dbm", c.evaluation.tx_powers_dbm},
            {"failure_probs", c.evaluation.failure_probs},
            {"cells", [&] {
               nlohmann::json a = nlohmann::json::array();
               for (const auto& k : c.evaluation.cells) a.push_back({k.tx_power_dbm, k.p_f});
               return a;
             }()},
            {"forced_failures", c.evaluation.forced_failures},
            {"percentiles", c.evaluation.percentiles}}}};
}

}  // namespace phasefix
