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
 * @file simulator.hpp
 * @brief Uplink carrier-phase observations with AP failures, differential
 *        measurements and labeled datasets.
 */
#pragma once

#include <charconv>
#include <complex>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "phasefix/core.hpp"
#include "phasefix/geometry.hpp"

namespace phasefix {

// ----------------------------------------------------------------------------
// Radio model
// ----------------------------------------------------------------------------

/// What a failed AP reports as its phase.
enum class FailurePhaseModel {
  kUniform,   // phase of pure receiver noise: Uniform[-pi, pi)
  kGaussian,  // literal reading theta_i = n_i with the AP's nominal sigma_i
};

inline std::string to_string(FailurePhaseModel m) {
  return m == FailurePhaseModel::kUniform ? "uniform" : "gaussian_n_i";
}

inline FailurePhaseModel failure_phase_model_from_string(const std::string& s) {
  if (s == "uniform") return FailurePhaseModel::kUniform;
  if (s == "gaussian_n_i") return FailurePhaseModel::kGaussian;
  throw InvalidArgument("unknown failure_phase_model '" + s + "'");
}

inline double db_to_linear(double db) { return std::pow(10.0, db / 10.0); }
inline double linear_to_db(double lin) { return 10.0 * std::log10(lin); }

struct RadioConfig {
  double carrier_freq_hz = 2.3e9;
  double bandwidth_hz = 1.8e5;
  double tx_power_dbm = 0.0;
  double noise_psd_dbm_hz = -174.0;
  double noise_figure_db = 13.0;
  FailurePhaseModel failure_phase_model = FailurePhaseModel::kUniform;
  /// Multiplies every sigma_i; 0 gives noiseless working APs.
  double noise_scale = 1.0;

  double wavelength() const { return kSpeedOfLight / carrier_freq_hz; }
  double tx_power_mw() const { return db_to_linear(tx_power_dbm); }
  /// Receiver noise power spectral density including the noise figure [mW/Hz].
  double effective_noise_psd_mw() const {
    return db_to_linear(noise_psd_dbm_hz) * db_to_linear(noise_figure_db);
  }

  void validate() const {
    if (!(carrier_freq_hz > 0.0)) throw InvalidArgument("radio: carrier_freq must be > 0");
    if (!(bandwidth_hz > 0.0)) throw InvalidArgument("radio: bandwidth must be > 0");
    if (!std::isfinite(tx_power_dbm) || !std::isfinite(noise_psd_dbm_hz) ||
        !std::isfinite(noise_figure_db))
      throw InvalidArgument("radio: power levels must be finite");
    if (!(noise_scale >= 0.0)) throw InvalidArgument("radio: noise_scale must be >= 0");
  }
};

/// Free-space amplitude gain lambda / (4 pi d).
inline double path_loss_amplitude(double d, double wavelength) {
  if (!(d > kPositionEpsilon))
    throw DegenerateDistance("path_loss_amplitude: distance " + std::to_string(d) +
                             " m is at or below the 1e-6 m guard");
  return wavelength / (2.0 * kTwoPi * d);
}

/// Linear SNR P_T rho^2 / (W N_0 F).
inline double link_snr(const RadioConfig& radio, double rho) {
  return radio.tx_power_mw() * rho * rho /
         (radio.bandwidth_hz * radio.effective_noise_psd_mw());
}

/// Phase-noise standard deviation sqrt(1 / (2 SNR)) [rad], before noise_scale.
inline double phase_noise_sigma(const RadioConfig& radio, double rho) {
  if (!(rho > 0.0)) throw InvalidArgument("phase_noise_sigma: rho must be > 0");
  return std::sqrt(1.0 / (2.0 * link_snr(radio, rho)));
}

// ----------------------------------------------------------------------------
// Failures
// ----------------------------------------------------------------------------

struct FailureMask {
  std::vector<std::uint8_t> working;  // f_i: 1 operational, 0 failed
  double p_f = 0.0;

  int num_failed() const {
    return static_cast<int>(std::count(working.begin(), working.end(), std::uint8_t{0}));
  }
  bool all_working() const { return num_failed() == 0; }
};

inline FailureMask draw_failure_mask(int num_aps, double p_f, Rng& rng) {
  if (!(p_f >= 0.0 && p_f <= 1.0)) throw InvalidArgument("draw_failure_mask: p_f outside [0, 1]");
  FailureMask mask;
  mask.p_f = p_f;
  mask.working.resize(num_aps);
  std::bernoulli_distribution fails(p_f);
  for (auto& f : mask.working) f = fails(rng) ? 0 : 1;
  return mask;
}

inline FailureMask draw_failure_mask(int num_aps, double p_f, std::uint64_t seed) {
  Rng rng(seed);
  return draw_failure_mask(num_aps, p_f, rng);
}

/// Exactly `count` failed APs at uniformly chosen distinct indices.
inline FailureMask forced_failure_mask(int num_aps, int count, Rng& rng) {
  if (count < 0 || count > num_aps)
    throw InvalidArgument("forced_failure_mask: count must lie in [0, I]");
  FailureMask mask;
  mask.p_f = 0.0;
  mask.working.assign(num_aps, 1);
  std::vector<int> idx(num_aps);
  std::iota(idx.begin(), idx.end(), 0);
  for (int k = 0; k < count; ++k) {
    const int pick = std::uniform_int_distribution<int>(k, num_aps - 1)(rng);
    std::swap(idx[k], idx[pick]);
    mask.working[idx[k]] = 0;
  }
  return mask;
}

// ----------------------------------------------------------------------------
// Observations
// ----------------------------------------------------------------------------

/// Phase observations theta_i. Working APs report the wrapped LOS phase plus
/// Gaussian noise (not re-wrapped); failed APs follow radio.failure_phase_model.
inline std::vector<double> gen_phase_observations(const Deployment& dep, const RadioConfig& radio,
                                                  const GroundTruth& gt, const FailureMask& mask,
                                                  Rng& rng) {
  const int n = dep.num_aps();
  if (static_cast<int>(mask.working.size()) != n || static_cast<int>(gt.distances.size()) != n)
    throw DimensionMismatch("gen_phase_observations: mask/ground truth length != I");
  std::vector<double> theta(n);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (int i = 0; i < n; ++i) {
    const double rho = path_loss_amplitude(gt.distances[i], dep.wavelength);
    const double sigma = radio.noise_scale * phase_noise_sigma(radio, rho);
    if (mask.working[i]) {
      theta[i] = gt.wrapped_phases[i] + sigma * gauss(rng);
    } else if (radio.failure_phase_model == FailurePhaseModel::kUniform) {
      theta[i] = uniform(rng, -kPi, kPi);
    } else {
      theta[i] = sigma * gauss(rng);
    }
  }
  return theta;
}

inline std::vector<double> gen_phase_observations(const Deployment& dep, const RadioConfig& radio,
                                                  const GroundTruth& gt, const FailureMask& mask,
                                                  std::uint64_t seed) {
  Rng rng(seed);
  return gen_phase_observations(dep, radio, gt, mask, rng);
}

/// Complex baseband samples y_i = f_i sqrt(P_T / W) rho_i exp(-j(2 pi d_i / lambda - phi)) s + v_i
/// with v_i ~ CN(0, N_0 F); amplitudes in sqrt(mW / Hz).
inline std::vector<std::complex<double>> gen_complex_observations(
    const Deployment& dep, const RadioConfig& radio, const GroundTruth& gt,
    const FailureMask& mask, std::complex<double> pilot, Rng& rng) {
  if (std::abs(std::abs(pilot) - 1.0) > 1e-12)
    throw InvalidArgument("gen_complex_observations: pilot must have unit modulus");
  const int n = dep.num_aps();
  if (static_cast<int>(mask.working.size()) != n)
    throw DimensionMismatch("gen_complex_observations: mask length != I");
  const double amp = std::sqrt(radio.tx_power_mw() / radio.bandwidth_hz);
  const double noise_std =
      radio.noise_scale * std::sqrt(radio.effective_noise_psd_mw() / 2.0);  // per component
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<std::complex<double>> y(n);
  for (int i = 0; i < n; ++i) {
    const double rho = path_loss_amplitude(gt.distances[i], dep.wavelength);
    std::complex<double> signal{0.0, 0.0};
    if (mask.working[i]) {
      const double phase = propagation_phase(gt.distances[i], dep.wavelength, gt.phi_ue);
      signal = amp * rho * std::polar(1.0, phase) * pilot;
    }
    const double re = gauss(rng);
    const double im = gauss(rng);
    y[i] = signal + noise_std * std::complex<double>(re, im);
  }
  return y;
}

inline std::vector<std::complex<double>> gen_complex_observations(
    const Deployment& dep, const RadioConfig& radio, const GroundTruth& gt,
    const FailureMask& mask, std::complex<double> pilot, std::uint64_t seed) {
  Rng rng(seed);
  return gen_complex_observations(dep, radio, gt, mask, pilot, rng);
}

/// arg(y_i conj(s)) mapped onto [-pi, pi).
inline std::vector<double> extract_phases(const std::vector<std::complex<double>>& y,
                                          std::complex<double> pilot) {
  std::vector<double> out(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    double a = std::arg(y[i] * std::conj(pilot));
    if (a >= kPi) a -= kTwoPi;
    out[i] = a;
  }
  return out;
}

/// Plain differences -(lambda / 2 pi)(theta_m - theta_0), m = 1..I-1.
inline std::vector<double> raw_diff_measurements(const std::vector<double>& theta,
                                                 double wavelength, int reference_index = 0) {
  if (theta.size() < 2) throw DimensionMismatch("diff_measurements: need at least 2 phases");
  if (reference_index < 0 || reference_index >= static_cast<int>(theta.size()))
    throw DimensionMismatch("diff_measurements: reference index out of range");
  const double scale = wavelength / kTwoPi;
  std::vector<double> delta;
  delta.reserve(theta.size() - 1);
  for (int m = 0; m < static_cast<int>(theta.size()); ++m) {
    if (m == reference_index) continue;
    delta.push_back(-scale * (theta[m] - theta[reference_index]));
  }
  return delta;
}

/// Differential measurements reduced modulo lambda into [0, lambda). This is
/// the form the estimator and solver consume; with it the noiseless identity
/// delta_m + lambda dz_m == d_m - d_0 holds with dz_m in [-q_m - 1, q_m].
inline std::vector<double> diff_measurements(const std::vector<double>& theta, double wavelength,
                                             int reference_index = 0) {
  auto delta = raw_diff_measurements(theta, wavelength, reference_index);
  for (auto& d : delta) d = reduce_to_wavelength(d, wavelength).value;
  return delta;
}

// ----------------------------------------------------------------------------
// Samples and datasets
// ----------------------------------------------------------------------------

enum class Split { kTrain, kValidation, kTest };

inline std::string to_string(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kValidation: return "val";
    case Split::kTest: return "test";
  }
  return "test";
}

inline Split split_from_string(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "val") return Split::kValidation;
  if (s == "test") return Split::kTest;
  throw InvalidArgument("unknown split '" + s + "'");
}

inline Stream stream_of(Split s) {
  switch (s) {
    case Split::kTrain: return Stream::kTrain;
    case Split::kValidation: return Stream::kValidation;
    case Split::kTest: return Stream::kTest;
  }
  return Stream::kTest;
}

struct Sample {
  GroundTruth ground_truth;
  FailureMask failure_mask;
  std::vector<double> theta;               // length I
  std::vector<double> delta;               // length I-1
  std::vector<std::int64_t> labels;        // length |J|, failure-independent
};

/// How a sample's failure mask is drawn.
struct FailurePolicy {
  double p_f = 0.0;
  /// When >= 0, exactly this many APs fail at random indices and p_f is ignored.
  int forced_count = -1;
};

/// One labeled sample from its own RNG stream. UE positions that land on an
/// AP are redrawn.
inline Sample generate_sample(const Deployment& dep, const RadioConfig& radio,
                              const FailurePolicy& policy, Rng& rng) {
  Sample s;
  for (;;) {
    const Vec2 ue = dep.region.sample(rng);
    const double phi = uniform(rng, 0.0, kTwoPi);
    try {
      s.ground_truth = ground_truth(dep, ue, phi);
      break;
    } catch (const DegeneratePosition&) {
    }
  }
  s.failure_mask = policy.forced_count >= 0
                       ? forced_failure_mask(dep.num_aps(), policy.forced_count, rng)
                       : draw_failure_mask(dep.num_aps(), policy.p_f, rng);
  s.theta = gen_phase_observations(dep, radio, s.ground_truth, s.failure_mask, rng);
  s.delta = diff_measurements(s.theta, dep.wavelength, dep.reference_index);
  s.labels = s.ground_truth.labels(dep);
  return s;
}

struct Dataset {
  Deployment deployment;
  RadioConfig radio;
  double p_f = 0.0;
  Split split = Split::kTrain;
  std::uint64_t root_seed = 0;
  std::vector<Sample> samples;

  std::size_t size() const { return samples.size(); }
};

inline Dataset generate_dataset(const Deployment& dep, const RadioConfig& radio, double p_f,
                                std::int64_t count, Split split, std::uint64_t root_seed,
                                unsigned threads = 1, Stream stream = Stream::kTrain,
                                bool stream_from_split = true) {
  if (count < 1) throw InvalidCount("generate_dataset: count must be >= 1");
  dep.validate();
  radio.validate();
  if (!(p_f >= 0.0 && p_f <= 1.0)) throw InvalidArgument("generate_dataset: p_f outside [0, 1]");
  Dataset ds;
  ds.deployment = dep;
  ds.radio = radio;
  ds.p_f = p_f;
  ds.split = split;
  ds.root_seed = root_seed;
  ds.samples.resize(static_cast<std::size_t>(count));
  const Stream s = stream_from_split ? stream_of(split) : stream;
  parallel_for(ds.samples.size(), threads, [&](std::size_t i) {
    Rng rng(derive_seed(root_seed, s, i));
    ds.samples[i] = generate_sample(dep, radio, FailurePolicy{p_f, -1}, rng);
  });
  return ds;
}

// ----------------------------------------------------------------------------
// Persistence: CSV rows plus a JSON sidecar at <path>.meta.json
// ----------------------------------------------------------------------------

inline nlohmann::json radio_to_json(const RadioConfig& r) {
  return {{"carrier_freq_hz", r.carrier_freq_hz},
          {"bandwidth_hz", r.bandwidth_hz},
          {"tx_power_dbm", r.tx_power_dbm},
          {"noise_psd_dbm_hz", r.noise_psd_dbm_hz},
          {"noise_figure_db", r.noise_figure_db},
          {"failure_phase_model", to_string(r.failure_phase_model)},
          {"noise_scale", r.noise_scale}};
}

inline RadioConfig radio_from_json(const nlohmann::json& j) {
  RadioConfig r;
  r.carrier_freq_hz = j.at("carrier_freq_hz").get<double>();
  r.bandwidth_hz = j.at("bandwidth_hz").get<double>();
  r.tx_power_dbm = j.at("tx_power_dbm").get<double>();
  r.noise_psd_dbm_hz = j.at("noise_psd_dbm_hz").get<double>();
  r.noise_figure_db = j.at("noise_figure_db").get<double>();
  r.failure_phase_model = failure_phase_model_from_string(j.at("failure_phase_model").get<std::string>());
  r.noise_scale = j.value("noise_scale", 1.0);
  r.validate();
  return r;
}

inline std::string dataset_header(int num_aps, int num_branches) {
  std::string h = "ue_x,ue_y,phi_ue";
  for (int i = 0; i < num_aps; ++i) h += ",f_" + std::to_string(i);
  for (int i = 0; i < num_aps; ++i) h += ",theta_" + std::to_string(i);
  for (int m = 1; m < num_aps; ++m) h += ",delta_" + std::to_string(m);
  for (int k = 1; k <= num_branches; ++k) h += ",dz_" + std::to_string(k);
  return h;
}

inline std::filesystem::path sidecar_path(const std::filesystem::path& csv) {
  return std::filesystem::path(csv.string() + ".meta.json");
}

inline void write_dataset(const Dataset& ds, const std::filesystem::path& path) {
  const auto& dep = ds.deployment;
  const int n = dep.num_aps();
  {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("write_dataset: cannot open " + path.string());
    out << dataset_header(n, dep.num_branches()) << '\n';
    std::string line;
    for (const auto& s : ds.samples) {
      line.clear();
      line += format_double(s.ground_truth.ue.x());
      line += ',' + format_double(s.ground_truth.ue.y());
      line += ',' + format_double(s.ground_truth.phi_ue);
      for (auto f : s.failure_mask.working) line += f ? ",1" : ",0";
      for (double t : s.theta) line += ',' + format_double(t);
      for (double d : s.delta) line += ',' + format_double(d);
      for (auto z : s.labels) line += ',' + std::to_string(z);
      out << line << '\n';
    }
    if (!out) throw IoError("write_dataset: write failed for " + path.string());
  }
  nlohmann::json meta = {{"deployment", deployment_to_json(dep)},
                         {"radio", radio_to_json(ds.radio)},
                         {"p_f", ds.p_f},
                         {"split", to_string(ds.split)},
                         {"root_seed", ds.root_seed},
                         {"count", ds.samples.size()}};
  std::ofstream mout(sidecar_path(path), std::ios::binary);
  if (!mout) throw IoError("write_dataset: cannot open sidecar for " + path.string());
  mout << meta.dump(2) << '\n';
}

namespace detail {

inline std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

template <typename T>
T parse_field(std::string_view tok, std::size_t line_no, std::string_view column) {
  T v{};
  const auto* end = tok.data() + tok.size();
  const auto [ptr, ec] = std::from_chars(tok.data(), end, v);
  if (ec != std::errc{} || ptr != end)
    throw SchemaError("line " + std::to_string(line_no) + ": cannot parse column '" +
                      std::string(column) + "' from '" + std::string(tok) + "'");
  return v;
}

}  // namespace detail

inline Dataset read_dataset(const std::filesystem::path& path) {
  std::ifstream mf(sidecar_path(path));
  if (!mf) throw IoError("read_dataset: missing sidecar " + sidecar_path(path).string());
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(mf);
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("read_dataset: sidecar: ") + e.what());
  }
  Dataset ds;
  std::size_t expected = 0;
  try {
    ds.deployment = deployment_from_json(meta.at("deployment"));
    ds.radio = radio_from_json(meta.at("radio"));
    ds.p_f = meta.at("p_f").get<double>();
    ds.split = split_from_string(meta.at("split").get<std::string>());
    ds.root_seed = meta.at("root_seed").get<std::uint64_t>();
    expected = meta.at("count").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("read_dataset: sidecar: ") + e.what());
  }

  const auto& dep = ds.deployment;
  const int n = dep.num_aps();
  const int nb = dep.num_branches();
  const std::string header = dataset_header(n, nb);
  const auto columns = detail::split_csv(header);

  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("read_dataset: cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw SchemaError("line 1: missing header");
  if (line != header)
    throw SchemaError("line 1: header does not match the expected column layout '" + header + "'");

  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) throw SchemaError("line " + std::to_string(line_no) + ": empty row");
    const auto tok = detail::split_csv(line);
    if (tok.size() != columns.size())
      throw SchemaError("line " + std::to_string(line_no) + ": expected " +
                        std::to_string(columns.size()) + " columns, found " +
                        std::to_string(tok.size()));
    std::size_t c = 0;
    auto num = [&](auto tag) {
      using T = decltype(tag);
      const auto v = detail::parse_field<T>(tok[c], line_no, columns[c]);
      ++c;
      return v;
    };
    Sample s;
    const double x = num(double{});
    const double y = num(double{});
    const double phi = num(double{});
    try {
      s.ground_truth = ground_truth(dep, Vec2(x, y), phi);
    } catch (const Error& e) {
      throw SchemaError("line " + std::to_string(line_no) + ": " + e.what());
    }
    s.failure_mask.p_f = ds.p_f;
    s.failure_mask.working.resize(n);
    for (int i = 0; i < n; ++i) {
      const int f = num(int{});
      if (f != 0 && f != 1)
        throw SchemaError("line " + std::to_string(line_no) + ": failure flag must be 0 or 1");
      s.failure_mask.working[i] = static_cast<std::uint8_t>(f);
    }
    s.theta.resize(n);
    for (auto& t : s.theta) t = num(double{});
    s.delta.resize(n - 1);
    for (auto& d : s.delta) d = num(double{});
    s.labels.resize(nb);
    for (auto& z : s.labels) z = num(std::int64_t{});
    if (s.labels != s.ground_truth.labels(dep))
      throw SchemaError("line " + std::to_string(line_no) +
                        ": dz columns disagree with the deployment geometry");
    ds.samples.push_back(std::move(s));
  }
  if (ds.samples.size() != expected)
    throw SchemaError("line " + std::to_string(line_no + 1) + ": file ends after " +
                      std::to_string(ds.samples.size()) + " rows, sidecar declares " +
                      std::to_string(expected));
  return ds;
}

}  // namespace phasefix
