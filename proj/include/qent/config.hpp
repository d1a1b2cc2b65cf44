#pragma once

// Experiment configuration: a JSON tree with strict key checking, forest
// presets pulled in by reference, and concurrence filters for subsets.

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <initializer_list>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "qent/errors.hpp"
#include "qent/evalx.hpp"
#include "qent/forest.hpp"
#include "qent/mlp.hpp"
#include "qent/sampler.hpp"
#include "qent/tomography.hpp"

namespace qent {

using Json = nlohmann::json;

/// Concurrence filter such as "separable|entangled>0.99": alternatives
/// joined by '|', each one of all, separable (C < tau), entangled (C >= tau),
/// entangled>X (C > X) or entangled<X (tau <= C < X).
class ConcurrenceFilter {
 public:
  ConcurrenceFilter() = default;

  static ConcurrenceFilter parse(const std::string& text) {
    ConcurrenceFilter f;
    f.text_ = text;
    std::size_t start = 0;
    while (start <= text.size()) {
      const std::size_t bar = text.find('|', start);
      const std::string term = text.substr(start, bar == std::string::npos ? std::string::npos : bar - start);
      f.terms_.push_back(parse_term(term));
      if (bar == std::string::npos) break;
      start = bar + 1;
    }
    return f;
  }

  bool operator()(double c) const {
    if (terms_.empty()) return true;
    for (const Term& t : terms_) {
      if (t.matches(c)) return true;
    }
    return false;
  }

  const std::string& text() const { return text_; }
  bool is_all() const { return terms_.empty() || (terms_.size() == 1 && terms_[0].kind == Kind::All); }

 private:
  enum class Kind { All, Separable, Entangled, Above, Below };
  struct Term {
    Kind kind;
    double bound = 0.0;
    bool matches(double c) const {
      switch (kind) {
        case Kind::All: return true;
        case Kind::Separable: return c < kEntanglementThreshold;
        case Kind::Entangled: return c >= kEntanglementThreshold;
        case Kind::Above: return c > bound;
        case Kind::Below: return c >= kEntanglementThreshold && c < bound;
      }
      return false;
    }
  };

  static Term parse_term(const std::string& t) {
    if (t == "all") return {Kind::All};
    if (t == "separable") return {Kind::Separable};
    if (t == "entangled") return {Kind::Entangled};
    for (const auto& [prefix, kind] : {std::pair{"entangled>", Kind::Above}, std::pair{"entangled<", Kind::Below}}) {
      const std::string p = prefix;
      if (t.rfind(p, 0) == 0) {
        try {
          std::size_t used = 0;
          const double v = std::stod(t.substr(p.size()), &used);
          if (used == t.size() - p.size() && v >= 0.0 && v <= 1.0) return {kind, v};
        } catch (const std::exception&) {
        }
      }
    }
    fail(ErrorKind::InvalidConfig, "bad concurrence filter term '" + t + "'");
  }

  std::string text_ = "all";
  std::vector<Term> terms_;
};

struct DatasetConfig {
  std::size_t n_train = 50000;
  std::size_t n_test = 5000;
  double fraction_entangled_target = 0.53;
  std::optional<std::size_t> n_bell_train;  // default: Bell weight times size
  std::optional<std::size_t> n_bell_test;
  SourceMix source_mix{};
  int circuit_depth = 2;
};

struct PerturbationConfig {
  double sigma = 0.05;
  std::size_t n_trials = 10;
};

struct NoiseSweepConfig {
  std::vector<double> sigmas{0.0, 0.05, 0.1, 0.2, 0.3, 0.5};
  std::size_t n_trials = 2;
};

struct ExplainConfig {
  std::size_t background_size = 64;
  std::size_t samples_per_subset = 100;
  std::size_t axiom_samples = 50;
  // The regressor and the analytic predictor are enumerated exactly, so they
  // get small backgrounds and fewer samples.
  std::size_t nn_background_size = 4;
  std::size_t analytic_background_size = 1;
  std::size_t nn_samples_per_subset = 20;
  std::string separable_filter = "separable";
  std::string entangled_filter = "entangled>0.99";
  std::string interaction_forest = "siv";
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  std::size_t threads = 1;
  std::string output_dir = "runs/default";
  DatasetConfig dataset{};
  std::map<std::string, ForestConfig> forests{
      {"rf1", presets::rf1()}, {"rf2", presets::rf2()}, {"rf3", presets::rf3()}, {"siv", presets::siv()}};
  TrainConfig mlp{};
  ClassificationThresholds thresholds{};
  bool tune_tau_nn = true;
  PerturbationConfig perturbation{};
  NoiseSweepConfig noise_sweep{};
  ExplainConfig explain{};
  std::string restricted_filter = "separable|entangled>0.99";

  DatasetSpec train_spec() const { return spec_for(dataset.n_train, dataset.n_bell_train, 1); }
  DatasetSpec test_spec() const { return spec_for(dataset.n_test, dataset.n_bell_test, 2); }

  const ForestConfig& forest(const std::string& name) const {
    const auto it = forests.find(name);
    if (it == forests.end()) fail(ErrorKind::InvalidConfig, "no forest named '" + name + "'");
    return it->second;
  }

  /// Train and test sets use different seed-derived streams.
  DatasetSpec spec_for(std::size_t n, std::optional<std::size_t> n_bell, std::uint64_t role) const {
    DatasetSpec s = DatasetSpec::with_defaults(n, splitmix64(seed ^ (0xDA7A0000ULL + role)));
    s.fraction_entangled_target = dataset.fraction_entangled_target;
    s.source_mix = dataset.source_mix;
    s.circuit_depth = dataset.circuit_depth;
    s.n_bell = n_bell.value_or(static_cast<std::size_t>(std::llround(dataset.source_mix.bell * static_cast<double>(n))));
    s.threads = threads;
    return s;
  }

  /// Model seeds are derived from the experiment seed and the model name.
  std::uint64_t model_seed(const std::string& name) const {
    std::uint64_t h = seed;
    for (unsigned char ch : name) h = splitmix64(h ^ ch);
    return h;
  }
};

inline void validate(const ExperimentConfig& c) {
  validate(c.train_spec());
  validate(c.test_spec());
  for (const auto& [name, f] : c.forests) validate(f, kNumMeasurements);
  validate(c.mlp);
  c.thresholds.validate();
  if (!(c.perturbation.sigma >= 0.0) || c.perturbation.n_trials == 0) {
    fail(ErrorKind::InvalidConfig, "perturbation needs sigma >= 0 and n_trials > 0");
  }
  if (c.noise_sweep.sigmas.empty() || c.noise_sweep.n_trials == 0) {
    fail(ErrorKind::InvalidConfig, "noise sweep needs sigmas and n_trials > 0");
  }
  for (std::size_t k = 0; k < c.noise_sweep.sigmas.size(); ++k) {
    if (!(c.noise_sweep.sigmas[k] >= 0.0) || (k > 0 && !(c.noise_sweep.sigmas[k] > c.noise_sweep.sigmas[k - 1]))) {
      fail(ErrorKind::InvalidConfig, "noise sweep sigmas must be >= 0 and ascending");
    }
  }
  const ExplainConfig& e = c.explain;
  if (e.background_size == 0 || e.samples_per_subset == 0 || e.axiom_samples == 0 ||
      e.nn_background_size == 0 || e.analytic_background_size == 0 || e.nn_samples_per_subset == 0) {
    fail(ErrorKind::InvalidConfig, "explain sizes must be positive");
  }
  ConcurrenceFilter::parse(e.separable_filter);
  ConcurrenceFilter::parse(e.entangled_filter);
  ConcurrenceFilter::parse(c.restricted_filter);
  c.forest(e.interaction_forest);
  if (c.threads == 0) fail(ErrorKind::InvalidConfig, "threads must be positive");
}

// ---------------------------------------------------------------------------
// JSON reading

namespace detail {

inline void allow_keys(const Json& j, std::initializer_list<const char*> keys, const std::string& where) {
  if (!j.is_object()) fail(ErrorKind::InvalidConfig, where + " must be an object");
  std::set<std::string> ok(keys.begin(), keys.end());
  for (const auto& [k, v] : j.items()) {
    if (!ok.count(k)) fail(ErrorKind::InvalidConfig, "unknown key '" + k + "' in " + where);
  }
}

template <class T>
void read(const Json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    fail(ErrorKind::InvalidConfig, std::string("bad value for '") + key + "' in " + where);
  }
}

template <class T>
void read_optional(const Json& j, const char* key, std::optional<T>& out, const std::string& where) {
  if (!j.contains(key)) return;
  if (j.at(key).is_null()) {
    out.reset();
    return;
  }
  T v{};
  read(j, key, v, where);
  out = v;
}

inline Json load_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::IoFailure, "cannot open " + path.string());
  try {
    return Json::parse(in, nullptr, true, true);
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorKind::InvalidConfig, path.string() + ": " + e.what());
  }
}

/// Replaces {"include": "file", ...overrides} objects by the referenced file's
/// object with the overrides merged on top. Paths are relative to the file
/// holding the reference.
inline Json resolve_includes(Json j, const std::filesystem::path& base, int depth = 0) {
  if (depth > 16) fail(ErrorKind::InvalidConfig, "include nesting too deep");
  if (!j.is_object()) return j;
  if (j.contains("include")) {
    if (!j["include"].is_string()) fail(ErrorKind::InvalidConfig, "include must be a path string");
    const std::filesystem::path target = base / j["include"].get<std::string>();
    Json merged = resolve_includes(load_json_file(target), target.parent_path(), depth + 1);
    j.erase("include");
    merged.merge_patch(j);
    j = std::move(merged);
  }
  for (auto& [k, v] : j.items()) v = resolve_includes(v, base, depth + 1);
  return j;
}

inline ForestConfig forest_from_json(const Json& j, const std::string& where) {
  allow_keys(j, {"preset", "n_estimators", "max_features", "max_depth", "min_samples_leaf", "bootstrap"}, where);
  ForestConfig f;
  if (j.contains("preset")) {
    const std::string p = j.at("preset").get<std::string>();
    if (p == "rf1") f = presets::rf1();
    else if (p == "rf2") f = presets::rf2();
    else if (p == "rf3") f = presets::rf3();
    else if (p == "siv") f = presets::siv();
    else fail(ErrorKind::InvalidConfig, "unknown forest preset '" + p + "'");
  }
  read(j, "n_estimators", f.n_estimators, where);
  read(j, "max_features", f.max_features, where);
  read_optional(j, "max_depth", f.max_depth, where);
  read_optional(j, "min_samples_leaf", f.min_samples_leaf, where);
  read(j, "bootstrap", f.bootstrap, where);
  return f;
}

}  // namespace detail

/// Builds a config from JSON, starting from the defaults. Includes must be
/// resolved already.
inline ExperimentConfig config_from_json(const Json& j) {
  using detail::allow_keys;
  using detail::read;
  allow_keys(j, {"seed", "threads", "output_dir", "dataset", "forests", "mlp", "thresholds", "perturbation",
                 "noise_sweep", "explain", "restricted_filter"},
             "config");
  ExperimentConfig c;
  read(j, "seed", c.seed, "config");
  read(j, "threads", c.threads, "config");
  read(j, "output_dir", c.output_dir, "config");
  read(j, "restricted_filter", c.restricted_filter, "config");

  if (j.contains("dataset")) {
    const Json& d = j["dataset"];
    allow_keys(d, {"n_train", "n_test", "fraction_entangled_target", "n_bell_train", "n_bell_test", "source_mix",
                   "circuit_depth"},
               "dataset");
    read(d, "n_train", c.dataset.n_train, "dataset");
    read(d, "n_test", c.dataset.n_test, "dataset");
    read(d, "fraction_entangled_target", c.dataset.fraction_entangled_target, "dataset");
    detail::read_optional(d, "n_bell_train", c.dataset.n_bell_train, "dataset");
    detail::read_optional(d, "n_bell_test", c.dataset.n_bell_test, "dataset");
    read(d, "circuit_depth", c.dataset.circuit_depth, "dataset");
    if (d.contains("source_mix")) {
      const Json& m = d["source_mix"];
      allow_keys(m, {"haar", "ginibre", "circuit", "bell"}, "dataset.source_mix");
      read(m, "haar", c.dataset.source_mix.haar, "source_mix");
      read(m, "ginibre", c.dataset.source_mix.ginibre, "source_mix");
      read(m, "circuit", c.dataset.source_mix.circuit, "source_mix");
      read(m, "bell", c.dataset.source_mix.bell, "source_mix");
    }
  }
  if (j.contains("forests")) {
    const Json& fs = j["forests"];
    if (!fs.is_object()) fail(ErrorKind::InvalidConfig, "forests must be an object");
    for (const auto& [name, v] : fs.items()) {
      c.forests[name] = detail::forest_from_json(v, "forests." + name);
    }
  }
  if (j.contains("mlp")) {
    const Json& m = j["mlp"];
    allow_keys(m, {"learning_rate", "batch_size", "epochs", "optimizer", "beta1", "beta2", "epsilon", "momentum",
                   "validation_fraction", "hidden"},
               "mlp");
    read(m, "learning_rate", c.mlp.learning_rate, "mlp");
    read(m, "batch_size", c.mlp.batch_size, "mlp");
    read(m, "epochs", c.mlp.epochs, "mlp");
    read(m, "beta1", c.mlp.beta1, "mlp");
    read(m, "beta2", c.mlp.beta2, "mlp");
    read(m, "epsilon", c.mlp.epsilon, "mlp");
    read(m, "momentum", c.mlp.momentum, "mlp");
    read(m, "validation_fraction", c.mlp.validation_fraction, "mlp");
    read(m, "hidden", c.mlp.hidden, "mlp");
    if (m.contains("optimizer")) {
      const std::string o = m["optimizer"].get<std::string>();
      if (o == "adam") c.mlp.optimizer = OptimizerKind::Adam;
      else if (o == "sgd_momentum") c.mlp.optimizer = OptimizerKind::SgdMomentum;
      else fail(ErrorKind::InvalidConfig, "unknown optimizer '" + o + "'");
    }
  }
  if (j.contains("thresholds")) {
    const Json& t = j["thresholds"];
    allow_keys(t, {"tau", "tau_nn", "tune_tau_nn"}, "thresholds");
    read(t, "tau", c.thresholds.tau, "thresholds");
    read(t, "tau_nn", c.thresholds.tau_nn, "thresholds");
    read(t, "tune_tau_nn", c.tune_tau_nn, "thresholds");
  }
  if (j.contains("perturbation")) {
    const Json& p = j["perturbation"];
    allow_keys(p, {"sigma", "n_trials"}, "perturbation");
    read(p, "sigma", c.perturbation.sigma, "perturbation");
    read(p, "n_trials", c.perturbation.n_trials, "perturbation");
  }
  if (j.contains("noise_sweep")) {
    const Json& n = j["noise_sweep"];
    allow_keys(n, {"sigmas", "n_trials"}, "noise_sweep");
    read(n, "sigmas", c.noise_sweep.sigmas, "noise_sweep");
    read(n, "n_trials", c.noise_sweep.n_trials, "noise_sweep");
  }
  if (j.contains("explain")) {
    const Json& e = j["explain"];
    allow_keys(e, {"background_size", "samples_per_subset", "axiom_samples", "nn_background_size",
                   "analytic_background_size", "nn_samples_per_subset", "separable_filter", "entangled_filter",
                   "interaction_forest"},
               "explain");
    read(e, "background_size", c.explain.background_size, "explain");
    read(e, "samples_per_subset", c.explain.samples_per_subset, "explain");
    read(e, "axiom_samples", c.explain.axiom_samples, "explain");
    read(e, "nn_background_size", c.explain.nn_background_size, "explain");
    read(e, "analytic_background_size", c.explain.analytic_background_size, "explain");
    read(e, "nn_samples_per_subset", c.explain.nn_samples_per_subset, "explain");
    read(e, "separable_filter", c.explain.separable_filter, "explain");
    read(e, "entangled_filter", c.explain.entangled_filter, "explain");
    read(e, "interaction_forest", c.explain.interaction_forest, "explain");
  }
  validate(c);
  return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  const Json raw = detail::load_json_file(path);
  return config_from_json(detail::resolve_includes(raw, path.parent_path()));
}

inline Json forest_to_json(const ForestConfig& f) {
  Json j{{"n_estimators", f.n_estimators}, {"max_features", f.max_features}, {"bootstrap", f.bootstrap}};
  j["max_depth"] = f.max_depth ? Json(*f.max_depth) : Json(nullptr);
  j["min_samples_leaf"] = f.min_samples_leaf ? Json(*f.min_samples_leaf) : Json(nullptr);
  return j;
}

/// Canonical JSON of every setting (after defaults and includes), used for
/// hashing and for the run record.
inline Json config_to_json(const ExperimentConfig& c) {
  Json j;
  j["seed"] = c.seed;
  j["threads"] = c.threads;
  j["output_dir"] = c.output_dir;
  j["restricted_filter"] = c.restricted_filter;
  const DatasetConfig& d = c.dataset;
  j["dataset"] = {{"n_train", d.n_train},
                  {"n_test", d.n_test},
                  {"fraction_entangled_target", d.fraction_entangled_target},
                  {"n_bell_train", c.train_spec().n_bell},
                  {"n_bell_test", c.test_spec().n_bell},
                  {"circuit_depth", d.circuit_depth},
                  {"source_mix",
                   {{"haar", d.source_mix.haar},
                    {"ginibre", d.source_mix.ginibre},
                    {"circuit", d.source_mix.circuit},
                    {"bell", d.source_mix.bell}}}};
  for (const auto& [name, f] : c.forests) j["forests"][name] = forest_to_json(f);
  const TrainConfig& m = c.mlp;
  j["mlp"] = {{"learning_rate", m.learning_rate},
              {"batch_size", m.batch_size},
              {"epochs", m.epochs},
              {"optimizer", m.optimizer == OptimizerKind::Adam ? "adam" : "sgd_momentum"},
              {"beta1", m.beta1},
              {"beta2", m.beta2},
              {"epsilon", m.epsilon},
              {"momentum", m.momentum},
              {"validation_fraction", m.validation_fraction},
              {"hidden", m.hidden}};
  j["thresholds"] = {{"tau", c.thresholds.tau}, {"tau_nn", c.thresholds.tau_nn}, {"tune_tau_nn", c.tune_tau_nn}};
  j["perturbation"] = {{"sigma", c.perturbation.sigma}, {"n_trials", c.perturbation.n_trials}};
  j["noise_sweep"] = {{"sigmas", c.noise_sweep.sigmas}, {"n_trials", c.noise_sweep.n_trials}};
  const ExplainConfig& e = c.explain;
  j["explain"] = {{"background_size", e.background_size},
                  {"samples_per_subset", e.samples_per_subset},
                  {"axiom_samples", e.axiom_samples},
                  {"nn_background_size", e.nn_background_size},
                  {"analytic_background_size", e.analytic_background_size},
                  {"nn_samples_per_subset", e.nn_samples_per_subset},
                  {"separable_filter", e.separable_filter},
                  {"entangled_filter", e.entangled_filter},
                  {"interaction_forest", e.interaction_forest}};
  return j;
}

/// Full published scale: 460k/46k states and 1000-tree forests.
inline void apply_paper_scale(ExperimentConfig& c) {
  c.dataset.n_train = 460000;
  c.dataset.n_test = 46000;
  c.dataset.n_bell_train.reset();
  c.dataset.n_bell_test.reset();
  for (auto& [name, f] : c.forests) {
    if (name != "siv") f.n_estimators = 1000;
  }
}

}  // namespace qent
