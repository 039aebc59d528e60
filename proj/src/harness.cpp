// Copyright 2026 The coopsense Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "coopsense/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <limits>
#include <numbers>
#include <ostream>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "coopsense/errors.hpp"
#include "coopsense/estimation.hpp"
#include "coopsense/klt.hpp"

namespace coopsense {

namespace {

using nlohmann::json;

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr double kMinTargetClearance = 20.0;  // [m] from any transmitter or receiver
constexpr int kDelayGrid = 201;

[[noreturn]] void config_error(const std::string& what) { fail(ErrorCode::kConfig, what); }

struct AlgorithmName {
  Algorithm algorithm;
  const char* name;
};

constexpr AlgorithmName kAlgorithmNames[] = {
    {Algorithm::kIdealSdcs, "ideal_sdcs"},
    {Algorithm::kUniform8Sdcs, "uniform8_sdcs"},
    {Algorithm::kToaIdcs, "toa_idcs"},
    {Algorithm::kToaRssIdcs, "toa_rss_idcs"},
    {Algorithm::kHisdcsFull, "hisdcs_full"},
    {Algorithm::kHisdcsNoselect, "hisdcs_noselect"},
    {Algorithm::kBitRealloc, "bit_realloc"},
};

bool valid_sweep(const std::string& name) {
  return name == "snr_db" || name == "n" || name == "epsilon" || name == "k_n" || name == "fs";
}

void check_keys(const json& j, std::initializer_list<const char*> allowed, const char* where) {
  if (!j.is_object()) config_error(std::string(where) + " must be an object");
  for (const auto& [key, value] : j.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; })) {
      config_error("unknown key '" + key + "' in " + where);
    }
  }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    config_error(std::string("bad value for '") + key + "'");
  }
}

void read_vec2(const json& j, const char* key, std::optional<Vec2>& out) {
  if (!j.contains(key)) return;
  std::vector<double> v;
  read(j, key, v);
  if (v.size() != 2) config_error(std::string("'") + key + "' must hold two numbers");
  out = Vec2(v[0], v[1]);
}

void add_algorithm(const std::string& name, std::vector<Algorithm>& out) {
  auto push = [&](Algorithm a) {
    if (std::find(out.begin(), out.end(), a) == out.end()) out.push_back(a);
  };
  if (name == "baselines") {
    for (Algorithm a : {Algorithm::kIdealSdcs, Algorithm::kUniform8Sdcs, Algorithm::kToaIdcs,
                        Algorithm::kToaRssIdcs}) {
      push(a);
    }
    return;
  }
  for (const auto& a : kAlgorithmNames) {
    if (name == a.name) {
      push(a.algorithm);
      return;
    }
  }
  config_error("unknown algorithm '" + name + "'");
}

std::string num(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

// Runs fn(i) for i in [0, count) on a pool of workers.
template <typename Fn>
void parallel_for(int count, int threads, Fn fn) {
  int workers = threads > 0 ? threads : static_cast<int>(std::thread::hardware_concurrency());
  workers = std::clamp(workers, 1, std::max(count, 1));
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::atomic<bool> failed{false};
  auto body = [&] {
    while (!failed.load()) {
      const int i = next.fetch_add(1);
      if (i >= count) return;
      try {
        fn(i);
      } catch (...) {
        if (!failed.exchange(true)) error = std::current_exception();
      }
    }
  };
  if (workers == 1) {
    body();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < workers; ++t) pool.emplace_back(body);
    for (auto& t : pool) t.join();
  }
  if (error) std::rethrow_exception(error);
}

bool needs_allocation(Algorithm a) {
  return a == Algorithm::kHisdcsFull || a == Algorithm::kHisdcsNoselect ||
         a == Algorithm::kBitRealloc;
}

struct Observation {
  Scene scene;
  std::vector<EchoRecord> records;
  std::vector<LocalEstimate> estimates;
  std::vector<KltCodec> codecs;
};

Observation observe(const ExperimentConfig& cfg, const Layout& layout, const Vec2& target,
                    std::mt19937_64& rng) {
  Observation o;
  o.scene = generate_scenario(cfg.scenario, layout, target);
  for (int n = 0; n < o.scene.size(); ++n) {
    o.records.push_back(synthesize_echo(o.scene, layout.w, n, rng));
    o.estimates.push_back(estimate_delay(o.records.back(), layout.w, o.scene.energy,
                                         o.scene.noise_var[n], layout.delay_spans[n]));
    const SampleWindow win = build_window(o.estimates.back().tau_hat, layout.w);
    o.codecs.push_back(window_covariance(o.estimates.back(), win, layout.w, o.scene.energy,
                                         o.scene.noise_var[n]));
  }
  return o;
}

double resolve_epsilon(const ExperimentConfig& cfg, double eps_star) {
  return cfg.epsilon_rule == EpsilonRule::kMultiple ? cfg.epsilon * eps_star : cfg.epsilon;
}

SignalObservation encode(const Observation& o, int n, const std::vector<int>& bits,
                         NoiseModel model) {
  const KltCodec& codec = o.codecs[n];
  const Eigen::VectorXd coeffs = codec.basis.transpose() * stack_real(o.records[n], codec.window);
  return quantized_observation(o.estimates[n], codec, quantize_window(coeffs, codec, bits), model);
}

void fill_allocation(const Observation& o, const Layout& layout, const ExperimentConfig& cfg,
                     const AllocationResult& r, bool keep_zero_bit, AlgorithmOutcome& out) {
  std::vector<SignalObservation> obs;
  std::vector<int> members = r.selected;
  std::vector<std::vector<int>> bits = r.bits;
  if (keep_zero_bit) {
    for (int n = 0; n < o.scene.size(); ++n) {
      if (std::find(members.begin(), members.end(), n) == members.end()) {
        members.push_back(n);
        bits.emplace_back(o.codecs[n].dim(), 0);
      }
    }
  }
  for (std::size_t p = 0; p < members.size(); ++p) {
    obs.push_back(encode(o, members[p], bits[p], cfg.noise_model));
  }
  out.theta = fc_ml_localize(obs, o.scene, layout.w, layout.search).theta;
  out.w = r.channel_uses;
  out.nodes = static_cast<int>(r.selected.size());
  for (std::size_t p = 0; p < r.selected.size(); ++p) {
    int total = 0;
    for (int b : r.bits[p]) total += b;
    out.bits.emplace_back(r.selected[p], total);
  }
}

}  // namespace

const char* to_string(Algorithm a) {
  for (const auto& n : kAlgorithmNames) {
    if (n.algorithm == a) return n.name;
  }
  return "unknown";
}

const char* to_string(Topology t) {
  switch (t) {
    case Topology::kLinear: return "linear";
    case Topology::kCircular: return "circular";
    case Topology::kRandom: return "random";
  }
  return "unknown";
}

ExperimentConfig ExperimentConfig::at(double v) const {
  ExperimentConfig c = *this;
  c.sweep_values = {v};
  if (sweep_name == "snr_db") {
    c.scenario.snr_db = v;
  } else if (sweep_name == "n") {
    if (v != std::round(v)) config_error("receiver count sweep values must be integers");
    c.scenario.receivers = static_cast<int>(v);
  } else if (sweep_name == "epsilon") {
    c.epsilon = v;
  } else if (sweep_name == "k_n") {
    if (v != std::round(v)) config_error("window sample sweep values must be integers");
    c.scenario.window_samples = static_cast<int>(v);
  } else if (sweep_name == "fs") {
    c.scenario.sample_rate_hz = v;
  } else {
    config_error("unknown sweep '" + sweep_name + "'");
  }
  return c;
}

void ExperimentConfig::validate() const {
  if (!valid_sweep(sweep_name)) config_error("unknown sweep '" + sweep_name + "'");
  if (sweep_values.empty()) config_error("sweep needs at least one value");
  if (trials < 1) config_error("trials must be at least 1");
  if (threads < 0) config_error("threads must be non-negative");
  if (!(solver.beta0 > 0.0) || !(solver.mu >= 0.0) || solver.max_iter < 1 ||
      !(solver.step_tol > 0.0) || !(solver.gap_tol > 0.0) || !(solver.beta_decay >= 0.0)) {
    config_error("invalid solver settings");
  }
  for (double v : sweep_values) {
    const ExperimentConfig c = at(v);
    const ScenarioConfig& s = c.scenario;
    if (s.receivers < 1 || s.receivers > kMaxMacUsers) {
      config_error("receiver count must be in [1, " + std::to_string(kMaxMacUsers) + "]");
    }
    if (!(s.spacing > 0.0) || !(s.tx_distance > 0.0) || !(s.radius > 0.0)) {
      config_error("geometry lengths must be positive");
    }
    if (!std::isfinite(s.snr_db)) config_error("snr_db must be finite");
    if (s.window_samples < 3) config_error("window needs at least 3 samples");
    if (!(s.sample_rate_hz > 0.0)) config_error("sample rate must be positive");
    if (!(s.backhaul_gain > 0.0) || !(s.backhaul_power > 0.0) || !(s.backhaul_noise > 0.0)) {
      config_error("backhaul parameters must be positive");
    }
    if (!(s.grid_cell > 0.0) || !(s.search_margin >= 0.0)) config_error("bad search grid");
    if (s.target_lo.has_value() != s.target_hi.has_value()) {
      config_error("target_lo and target_hi go together");
    }
    if (s.target_lo && !((s.target_lo->array() < s.target_hi->array()).all())) {
      config_error("target region is empty");
    }
    if (c.epsilon_rule == EpsilonRule::kMultiple && !(c.epsilon > 1.0)) {
      fail(ErrorCode::kInfeasibleEpsilon, "epsilon multiple must exceed 1");
    }
    if (c.epsilon_rule == EpsilonRule::kAbsolute && !(c.epsilon > 0.0)) {
      fail(ErrorCode::kInfeasibleEpsilon, "epsilon must be positive");
    }
  }
}

ExperimentConfig parse_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    config_error(std::string("malformed JSON: ") + e.what());
  }
  check_keys(j, {"scenario", "sweep", "trials", "epsilon", "algorithms", "seed", "solver",
                 "noise_model", "threads"},
             "config");
  ExperimentConfig cfg;
  if (j.contains("scenario")) {
    const json& s = j["scenario"];
    check_keys(s, {"topology", "receivers", "spacing", "tx_distance", "radius", "target_lo",
                   "target_hi", "snr_db", "window_samples", "sample_rate_hz", "backhaul_gain",
                   "backhaul_power", "backhaul_noise", "grid_cell", "search_margin",
                   "layout_seed"},
               "scenario");
    ScenarioConfig& sc = cfg.scenario;
    std::string topology = to_string(sc.topology);
    read(s, "topology", topology);
    if (topology == "linear") {
      sc.topology = Topology::kLinear;
    } else if (topology == "circular") {
      sc.topology = Topology::kCircular;
    } else if (topology == "random") {
      sc.topology = Topology::kRandom;
    } else {
      config_error("unknown topology '" + topology + "'");
    }
    read(s, "receivers", sc.receivers);
    read(s, "spacing", sc.spacing);
    read(s, "tx_distance", sc.tx_distance);
    read(s, "radius", sc.radius);
    read_vec2(s, "target_lo", sc.target_lo);
    read_vec2(s, "target_hi", sc.target_hi);
    read(s, "snr_db", sc.snr_db);
    read(s, "window_samples", sc.window_samples);
    read(s, "sample_rate_hz", sc.sample_rate_hz);
    read(s, "backhaul_gain", sc.backhaul_gain);
    read(s, "backhaul_power", sc.backhaul_power);
    read(s, "backhaul_noise", sc.backhaul_noise);
    read(s, "grid_cell", sc.grid_cell);
    read(s, "search_margin", sc.search_margin);
    read(s, "layout_seed", sc.layout_seed);
  }
  if (j.contains("sweep")) {
    const json& s = j["sweep"];
    check_keys(s, {"name", "values"}, "sweep");
    read(s, "name", cfg.sweep_name);
    read(s, "values", cfg.sweep_values);
  }
  read(j, "trials", cfg.trials);
  if (j.contains("epsilon")) {
    const json& e = j["epsilon"];
    check_keys(e, {"rule", "value"}, "epsilon");
    std::string rule = "multiple";
    read(e, "rule", rule);
    if (rule == "multiple") {
      cfg.epsilon_rule = EpsilonRule::kMultiple;
    } else if (rule == "absolute") {
      cfg.epsilon_rule = EpsilonRule::kAbsolute;
    } else {
      config_error("unknown epsilon rule '" + rule + "'");
    }
    read(e, "value", cfg.epsilon);
  }
  if (j.contains("algorithms")) {
    std::vector<std::string> names;
    read(j, "algorithms", names);
    for (const auto& n : names) add_algorithm(n, cfg.algorithms);
  }
  read(j, "seed", cfg.seed);
  if (j.contains("solver")) {
    const json& s = j["solver"];
    check_keys(s, {"mu", "beta0", "beta_decay", "max_iter", "step_tol", "gap_tol"}, "solver");
    read(s, "mu", cfg.solver.mu);
    read(s, "beta0", cfg.solver.beta0);
    read(s, "beta_decay", cfg.solver.beta_decay);
    read(s, "max_iter", cfg.solver.max_iter);
    read(s, "step_tol", cfg.solver.step_tol);
    read(s, "gap_tol", cfg.solver.gap_tol);
  }
  if (j.contains("noise_model")) {
    std::string model;
    read(j, "noise_model", model);
    if (model == "nominal") {
      cfg.noise_model = NoiseModel::kNominal;
    } else if (model == "exact") {
      cfg.noise_model = NoiseModel::kExact;
    } else {
      config_error("unknown noise model '" + model + "'");
    }
  }
  read(j, "threads", cfg.threads);
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kIo, "cannot open config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

Layout make_layout(const ScenarioConfig& cfg) {
  const int n = cfg.receivers;
  require(n >= 1, "layout needs at least one receiver");
  Layout l;
  switch (cfg.topology) {
    case Topology::kLinear: {
      const double center = 0.5 * cfg.spacing * (n - 1);
      l.tx = {center, cfg.tx_distance};
      for (int i = 0; i < n; ++i) l.rx.push_back({cfg.spacing * i, 0.0});
      l.target_lo = {center - 50.0, 50.0};
      l.target_hi = {center + 50.0, 100.0};
      break;
    }
    case Topology::kCircular: {
      for (int i = 0; i < n; ++i) {
        const double phi = 2.0 * std::numbers::pi * i / n;
        l.rx.push_back({cfg.radius * std::cos(phi), cfg.radius * std::sin(phi)});
      }
      l.disc_radius = cfg.radius;
      break;
    }
    case Topology::kRandom: {
      std::mt19937_64 rng(cfg.layout_seed);
      std::uniform_real_distribution<double> u(-cfg.radius, cfg.radius);
      while (static_cast<int>(l.rx.size()) < n) {
        const Vec2 p(u(rng), u(rng));
        if (p.norm() > cfg.radius || p.norm() < 2.0 * kMinTargetClearance) continue;
        bool clear = true;
        for (const Vec2& q : l.rx) clear = clear && (p - q).norm() >= 2.0 * kMinTargetClearance;
        if (clear) l.rx.push_back(p);
      }
      l.disc_radius = cfg.radius;
      break;
    }
  }
  if (l.disc_radius > 0.0) {
    l.target_lo = Vec2::Constant(-l.disc_radius);
    l.target_hi = Vec2::Constant(l.disc_radius);
  }
  if (cfg.target_lo) {
    l.target_lo = *cfg.target_lo;
    l.target_hi = *cfg.target_hi;
  }
  l.search.lo = l.target_lo;
  l.search.hi = l.target_hi;
  l.search.cell = cfg.grid_cell;
  l.search = l.search.inflated(cfg.search_margin);

  l.w.sample_period = 1.0 / cfg.sample_rate_hz;
  l.w.window_length = (cfg.window_samples - 2) * l.w.sample_period;

  // Delay spans over the search region, sampled densely and padded by two pulses.
  const Vec2 span = l.search.hi - l.search.lo;
  const double step = span.norm() / (kDelayGrid - 1);
  double tau_max = 0.0;
  for (int r = 0; r < n; ++r) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = 0.0;
    for (int a = 0; a < kDelayGrid; ++a) {
      for (int b = 0; b < kDelayGrid; ++b) {
        const Vec2 p = l.search.lo + Vec2(span.x() * a, span.y() * b) / (kDelayGrid - 1);
        const double t = bistatic_delay(l.tx, l.rx[r], p);
        lo = std::min(lo, t);
        hi = std::max(hi, t);
      }
    }
    const double pad = 2.0 * l.w.pulse_width + 2.0 * step / kSpeedOfLight;
    DelaySearch d;
    d.tau_min = std::max(lo - pad, 0.0);
    d.tau_max = hi + pad;
    l.delay_spans.push_back(d);
    tau_max = std::max(tau_max, d.tau_max);
  }
  l.w.total_samples = covering_sample_count(tau_max, l.w);
  l.w.validate();
  return l;
}

Vec2 draw_target(const Layout& layout, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> ux(layout.target_lo.x(), layout.target_hi.x());
  std::uniform_real_distribution<double> uy(layout.target_lo.y(), layout.target_hi.y());
  for (int attempt = 0; attempt < 100000; ++attempt) {
    const Vec2 p(ux(rng), uy(rng));
    if (layout.disc_radius > 0.0 && (p - layout.tx).norm() > layout.disc_radius) continue;
    bool clear = (p - layout.tx).norm() >= kMinTargetClearance;
    for (const Vec2& r : layout.rx) clear = clear && (p - r).norm() >= kMinTargetClearance;
    if (clear) return p;
  }
  fail(ErrorCode::kConfig, "target region leaves no room away from the nodes");
}

Scene generate_scenario(const ScenarioConfig& cfg, const Layout& layout, const Vec2& target) {
  Scene s;
  s.tx = layout.tx;
  s.rx = layout.rx;
  s.target = target;
  const int n = s.size();
  s.backhaul_power.assign(n, cfg.backhaul_power);
  s.backhaul_gain.assign(n, cfg.backhaul_gain);
  s.backhaul_noise = cfg.backhaul_noise;
  double power = 0.0;
  for (int i = 0; i < n; ++i) {
    const double a = alpha_magnitude(s, layout.w, i);
    power += s.energy * a * a;
  }
  power /= n;
  s.noise_var.assign(n, power / (layout.w.window_length * std::pow(10.0, cfg.snr_db / 10.0)));
  s.validate();
  return s;
}

std::mt19937_64 trial_rng(std::uint64_t seed, int trial) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(trial)};
  return std::mt19937_64(seq);
}

TrialOutcome run_pipeline_once(const ExperimentConfig& cfg, const Layout& layout, int trial,
                               std::mt19937_64& rng) {
  TrialOutcome out;
  out.trial = trial;
  out.epsilon_star = kNaN;
  out.epsilon = kNaN;
  out.algorithms.resize(cfg.algorithms.size());
  out.target = draw_target(layout, rng);
  if (cfg.algorithms.empty()) return out;

  auto fail_all = [&](const std::string& code) {
    for (auto& a : out.algorithms) {
      a.ok = false;
      a.error = code;
    }
  };

  Observation o;
  Vec2 theta0;
  try {
    o = observe(cfg, layout, out.target, rng);
    theta0 = baseline_toa_idcs(o.estimates, o.scene, layout.search).theta;
  } catch (const Error& e) {
    fail_all(to_string(e.code()));
    return out;
  }

  const bool optimize = std::any_of(cfg.algorithms.begin(), cfg.algorithms.end(), needs_allocation);
  FimContext ctx;
  std::optional<AllocationResult> full;
  std::string full_error;
  if (optimize) {
    try {
      ctx = build_anchored_fim_context(o.scene, o.estimates, o.codecs, theta0, layout.w,
                                       cfg.noise_model);
      out.epsilon_star = epsilon_star(ctx, ctx.all());
      out.epsilon = resolve_epsilon(cfg, out.epsilon_star);
      full = mcsca_run(ctx, o.scene, ctx.all(), out.epsilon, cfg.solver);
    } catch (const Error& e) {
      full_error = to_string(e.code());
    }
  }

  for (std::size_t k = 0; k < cfg.algorithms.size(); ++k) {
    const Algorithm alg = cfg.algorithms[k];
    AlgorithmOutcome& a = out.algorithms[k];
    const int n = o.scene.size();
    try {
      switch (alg) {
        case Algorithm::kIdealSdcs: {
          std::vector<SignalObservation> obs;
          for (int i = 0; i < n; ++i) {
            obs.push_back(ideal_observation(o.records[i], o.estimates[i], o.codecs[i].window,
                                            o.scene.noise_var[i]));
          }
          a.theta = fc_ml_localize(obs, o.scene, layout.w, layout.search).theta;
          a.w = kNaN;
          a.nodes = n;
          break;
        }
        case Algorithm::kUniform8Sdcs: {
          std::vector<SignalObservation> obs;
          std::vector<double> totals;
          std::vector<int> ids;
          for (int i = 0; i < n; ++i) {
            obs.push_back(uniform_observation(o.records[i], o.estimates[i], o.codecs[i], 8));
            totals.push_back(8.0 * o.codecs[i].dim());
            ids.push_back(i);
            a.bits.emplace_back(i, 8 * o.codecs[i].dim());
          }
          a.theta = fc_ml_localize(obs, o.scene, layout.w, layout.search).theta;
          a.w = min_channel_uses(totals, build_mac_region(o.scene, ids));
          a.nodes = n;
          break;
        }
        case Algorithm::kToaIdcs:
          a.theta = theta0;
          a.w = kNaN;
          a.nodes = n;
          break;
        case Algorithm::kToaRssIdcs:
          a.theta = baseline_toa_rss_idcs(o.estimates, o.scene, layout.w, layout.search).theta;
          a.w = kNaN;
          a.nodes = n;
          break;
        case Algorithm::kHisdcsFull: {
          if (!full) fail(ErrorCode::kNumericalFailure, full_error);
          const SelectionResult sel = greedy_select(ctx, o.scene, out.epsilon, cfg.solver, *full);
          fill_allocation(o, layout, cfg, sel.best, false, a);
          a.iterations = sel.best.iterations;
          break;
        }
        case Algorithm::kHisdcsNoselect:
          if (!full) fail(ErrorCode::kNumericalFailure, full_error);
          fill_allocation(o, layout, cfg, *full, false, a);
          a.iterations = full->iterations;
          break;
        case Algorithm::kBitRealloc: {
          if (!full) fail(ErrorCode::kNumericalFailure, full_error);
          const AllocationResult r = bit_realloc(ctx, o.scene, out.epsilon, *full);
          fill_allocation(o, layout, cfg, r, true, a);
          a.iterations = full->iterations;
          break;
        }
      }
      a.ok = true;
      a.sq_error = (a.theta - out.target).squaredNorm();
    } catch (const Error& e) {
      a = AlgorithmOutcome{};
      a.error = needs_allocation(alg) && !full ? full_error : to_string(e.code());
    }
  }
  return out;
}

SweepResult run_sweep(const ExperimentConfig& cfg) {
  cfg.validate();
  const int points = static_cast<int>(cfg.sweep_values.size());
  std::vector<ExperimentConfig> configs;
  std::vector<Layout> layouts;
  for (double v : cfg.sweep_values) {
    configs.push_back(cfg.at(v));
    layouts.push_back(make_layout(configs.back().scenario));
  }
  SweepResult result;
  result.outcomes.assign(points, std::vector<TrialOutcome>(cfg.trials));
  if (!cfg.algorithms.empty()) {
    parallel_for(points * cfg.trials, cfg.threads, [&](int i) {
      const int p = i / cfg.trials;
      const int t = i % cfg.trials;
      std::mt19937_64 rng = trial_rng(cfg.seed, t);
      result.outcomes[p][t] = run_pipeline_once(configs[p], layouts[p], t, rng);
    });
  }

  for (int p = 0; p < points; ++p) {
    for (std::size_t k = 0; k < cfg.algorithms.size(); ++k) {
      ResultRow row;
      row.sweep_name = cfg.sweep_name;
      row.sweep_value = cfg.sweep_values[p];
      row.algorithm = cfg.algorithms[k];
      double se = 0.0, se2 = 0.0, w = 0.0, w2 = 0.0, nodes = 0.0, its = 0.0;
      for (const TrialOutcome& t : result.outcomes[p]) {
        const AlgorithmOutcome& a = t.algorithms[k];
        if (!a.ok) {
          ++row.failures;
          continue;
        }
        ++row.trials;
        se += a.sq_error;
        se2 += a.sq_error * a.sq_error;
        w += a.w;
        w2 += a.w * a.w;
        nodes += a.nodes;
        its += a.iterations;
      }
      const double m = row.trials;
      if (row.trials == 0) {
        row.mse = row.mse_se = row.mean_w = row.w_se = row.mean_nodes = row.mean_iterations = kNaN;
      } else {
        row.mse = se / m;
        row.mean_w = w / m;
        row.mean_nodes = nodes / m;
        row.mean_iterations = its / m;
        const double denom = row.trials > 1 ? m * (m - 1.0) : 1.0;
        row.mse_se = std::sqrt(std::max(0.0, se2 - se * se / m) / denom);
        row.w_se = std::isnan(row.mean_w) ? kNaN : std::sqrt(std::max(0.0, w2 - w * w / m) / denom);
      }
      result.rows.push_back(row);
    }
  }
  return result;
}

void write_results_csv(std::ostream& os, const std::vector<ResultRow>& rows) {
  os << "sweep_name,sweep_value,algorithm,mse,mean_w,mean_nodes,trials,failures\n";
  for (const auto& r : rows) {
    os << r.sweep_name << ',' << num(r.sweep_value) << ',' << to_string(r.algorithm) << ','
       << num(r.mse) << ',' << num(r.mean_w) << ',' << num(r.mean_nodes) << ',' << r.trials << ','
       << r.failures << '\n';
  }
  if (!os) fail(ErrorCode::kIo, "failed writing results");
}

void write_trials_csv(std::ostream& os, const ExperimentConfig& cfg, const SweepResult& result) {
  os << "sweep_name,sweep_value,trial,algorithm,status,sq_error,w,nodes,iterations,epsilon_star,"
        "epsilon,bits\n";
  for (std::size_t p = 0; p < result.outcomes.size(); ++p) {
    for (const TrialOutcome& t : result.outcomes[p]) {
      for (std::size_t k = 0; k < cfg.algorithms.size(); ++k) {
        const AlgorithmOutcome& a = t.algorithms[k];
        os << cfg.sweep_name << ',' << num(cfg.sweep_values[p]) << ',' << t.trial << ','
           << to_string(cfg.algorithms[k]) << ',' << (a.ok ? "ok" : a.error) << ',';
        if (a.ok) {
          os << num(a.sq_error) << ',' << num(a.w) << ',' << a.nodes << ',' << a.iterations;
        } else {
          os << ",,,";
        }
        os << ',' << num(t.epsilon_star) << ',' << num(t.epsilon) << ',';
        for (std::size_t b = 0; b < a.bits.size(); ++b) {
          os << (b ? ";" : "") << a.bits[b].first << ':' << a.bits[b].second;
        }
        os << '\n';
      }
    }
  }
  if (!os) fail(ErrorCode::kIo, "failed writing trial records");
}

std::vector<EpsilonStarRow> epsilon_star_table(const ExperimentConfig& cfg) {
  cfg.validate();
  const int points = static_cast<int>(cfg.sweep_values.size());
  std::vector<ExperimentConfig> configs;
  std::vector<Layout> layouts;
  for (double v : cfg.sweep_values) {
    configs.push_back(cfg.at(v));
    layouts.push_back(make_layout(configs.back().scenario));
  }
  std::vector<EpsilonStarRow> rows(points * cfg.trials);
  parallel_for(points * cfg.trials, cfg.threads, [&](int i) {
    const int p = i / cfg.trials;
    const int t = i % cfg.trials;
    EpsilonStarRow& row = rows[i];
    row.sweep_value = cfg.sweep_values[p];
    row.trial = t;
    row.epsilon_star = kNaN;
    row.epsilon = kNaN;
    try {
      const TrialProblem tp = prepare_trial(configs[p], layouts[p], t);
      row.target = tp.target;
      row.epsilon_star = tp.epsilon_star;
      row.epsilon = tp.epsilon;
    } catch (const Error&) {
      std::mt19937_64 rng = trial_rng(cfg.seed, t);
      row.target = draw_target(layouts[p], rng);
    }
  });
  return rows;
}

void write_epsilon_star_csv(std::ostream& os, const ExperimentConfig& cfg,
                            const std::vector<EpsilonStarRow>& rows) {
  os << "sweep_name,sweep_value,trial,target_x,target_y,epsilon_star,epsilon\n";
  for (const auto& r : rows) {
    os << cfg.sweep_name << ',' << num(r.sweep_value) << ',' << r.trial << ','
       << num(r.target.x()) << ',' << num(r.target.y()) << ',' << num(r.epsilon_star) << ','
       << num(r.epsilon) << '\n';
  }
  if (!os) fail(ErrorCode::kIo, "failed writing epsilon table");
}

TrialProblem prepare_trial(const ExperimentConfig& cfg, const Layout& layout, int trial) {
  std::mt19937_64 rng = trial_rng(cfg.seed, trial);
  TrialProblem tp;
  tp.target = draw_target(layout, rng);
  const Observation o = observe(cfg, layout, tp.target, rng);
  tp.scene = o.scene;
  tp.theta0 = baseline_toa_idcs(o.estimates, o.scene, layout.search).theta;
  tp.ctx = build_anchored_fim_context(o.scene, o.estimates, o.codecs, tp.theta0, layout.w,
                                      cfg.noise_model);
  tp.epsilon_star = epsilon_star(tp.ctx, tp.ctx.all());
  tp.epsilon = resolve_epsilon(cfg, tp.epsilon_star);
  return tp;
}

AllocationResult trace_mcsca(const ExperimentConfig& cfg) {
  cfg.validate();
  const ExperimentConfig c = cfg.at(cfg.sweep_values.front());
  const TrialProblem tp = prepare_trial(c, make_layout(c.scenario), 0);
  SolverConfig solver = c.solver;
  solver.record_trace = true;
  return mcsca_run(tp.ctx, tp.scene, tp.ctx.all(), tp.epsilon, solver);
}

void write_trace_csv(std::ostream& os, const AllocationResult& r) {
  os << "iteration,beta,w,trace_m,crlb,step,step_tol,restored,newton_steps\n";
  for (const TraceRow& t : r.trace) {
    os << t.iteration << ',' << num(t.beta) << ',' << num(t.w) << ',' << num(t.trace_m) << ','
       << num(t.crlb) << ',' << num(t.step) << ',' << num(t.step_tol) << ','
       << (t.restored ? 1 : 0) << ',' << t.newton_steps << '\n';
  }
  if (!os) fail(ErrorCode::kIo, "failed writing trace");
}

}  // namespace coopsense
