#pragma once

// Experiment stages over one output directory: datasets, models, metrics,
// explanations and figure bundles. Every stage reuses artifacts whose
// settings hash is unchanged and records what it writes in the run record.

#include <json.hpp>

#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "qent/config.hpp"
#include "qent/dataset.hpp"
#include "qent/evalx.hpp"
#include "qent/explain.hpp"
#include "qent/forest.hpp"
#include "qent/manifest.hpp"
#include "qent/mlp.hpp"
#include "qent/report.hpp"
#include "qent/tomography.hpp"

namespace qent {

using Logger = std::function<void(const std::string&)>;

/// One pass/fail line of a figure bundle.
struct Check {
  int criterion = 0;
  std::string name;
  bool pass = false;
  std::string detail;
};

struct FigureReport {
  std::string figure;
  std::vector<std::filesystem::path> files;
  std::vector<Check> checks;

  bool passed() const {
    for (const Check& c : checks) {
      if (!c.pass) return false;
    }
    return true;
  }
};

struct MlpModel {
  MlpParams params;
  double tau_nn = 0.03;
  std::size_t best_epoch = 0;
  double best_validation_rmse = 0.0;
};

inline const std::vector<std::string>& figure_names() {
  static const std::vector<std::string> names{"table1", "fig2b", "fig3", "fig4", "fig5", "fig6", "fig7", "fig10"};
  return names;
}

namespace detail {

inline std::string fmt(double v, int digits = 4) {
  std::ostringstream s;
  s.precision(digits);
  s << v;
  return s.str();
}

inline std::string block_summary(std::span<const double> values) {
  const auto m = block_means(values);
  std::ostringstream s;
  s.precision(4);
  s << "A=" << m[0] << " B=" << m[1] << " C=" << m[2] << " D=" << m[3];
  return s.str();
}

inline std::size_t argmax4(const std::array<double, 4>& v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}
inline std::size_t argmin4(const std::array<double, 4>& v) {
  return static_cast<std::size_t>(std::min_element(v.begin(), v.end()) - v.begin());
}

inline Json spec_json(const DatasetSpec& s) {
  return {{"n_total", s.n_total},
          {"n_bell", s.n_bell},
          {"seed", s.seed},
          {"fraction_entangled_target", s.fraction_entangled_target},
          {"circuit_depth", s.circuit_depth},
          {"source_mix",
           {{"haar", s.source_mix.haar},
            {"ginibre", s.source_mix.ginibre},
            {"circuit", s.source_mix.circuit},
            {"bell", s.source_mix.bell}}}};
}

inline std::string to_bytes(const std::function<void(std::ostream&)>& write) {
  std::ostringstream s(std::ios::binary);
  write(s);
  return s.str();
}

}  // namespace detail

class Pipeline {
 public:
  Pipeline(ExperimentConfig cfg, const std::filesystem::path& dir, Logger log = {})
      : cfg_(std::move(cfg)), ws_(dir), log_(std::move(log)) {
    validate(cfg_);
    ws_.set_config(config_to_json(cfg_));
  }

  const ExperimentConfig& config() const { return cfg_; }
  Workspace& workspace() { return ws_; }

  // -------------------------------------------------------------------------
  // Datasets

  const Dataset& train_set() { return dataset("train", train_); }
  const Dataset& test_set() { return dataset("test", test_); }

  std::vector<std::filesystem::path> generate() {
    train_set();
    test_set();
    return {ws_.path_of("dataset/train"), ws_.path_of("dataset/train.meta"), ws_.path_of("dataset/train.hist"),
            ws_.path_of("dataset/test"), ws_.path_of("dataset/test.meta"), ws_.path_of("dataset/test.hist")};
  }

  /// Tag appended to file names of models trained on a filtered subset.
  std::string filter_tag(const std::string& filter) const {
    if (ConcurrenceFilter::parse(filter).is_all()) return "";
    if (filter == cfg_.restricted_filter) return "_restricted";
    return "_" + sha256_hex(filter).substr(0, 8);
  }

  // -------------------------------------------------------------------------
  // Models

  const RandomForest& forest(const std::string& name, const std::string& filter = "all") {
    const std::string key = name + filter_tag(filter);
    if (const auto it = forests_.find(key); it != forests_.end()) return it->second;
    ForestConfig fc = cfg_.forest(name);
    fc.seed = cfg_.model_seed(name);
    fc.threads = cfg_.threads;
    const Dataset& train = train_set();
    const std::string hash = sha256_hex(
        Json{{"forest", forest_to_json(fc)}, {"seed", fc.seed}, {"filter", filter},
             {"train", ws_.entry("dataset/train").sha256}}
            .dump());
    const std::string logical = "model/" + key;
    if (ws_.is_current(logical, hash)) {
      std::istringstream in(read_file_bytes(ws_.path_of(logical)), std::ios::binary);
      return forests_.emplace(key, RandomForest::load(in)).first->second;
    }
    const Dataset data = train.filter(ConcurrenceFilter::parse(filter));
    note("training forest " + key + " on " + std::to_string(data.size()) + " states");
    const auto t0 = std::chrono::steady_clock::now();
    RandomForest f = fit_forest(data.features(), data.labels(cfg_.thresholds.tau), fc);
    note("forest " + key + " done in " + seconds_since(t0));
    ws_.put(logical, key + ".qrf", detail::to_bytes([&](std::ostream& o) { f.save(o); }), hash, "train");
    return forests_.emplace(key, std::move(f)).first->second;
  }

  const MlpModel& mlp(const std::string& filter = "all") {
    const std::string key = "mlp" + filter_tag(filter);
    if (const auto it = mlps_.find(key); it != mlps_.end()) return it->second;
    TrainConfig tc = cfg_.mlp;
    tc.seed = cfg_.model_seed("mlp");
    const Dataset& train = train_set();
    const std::string hash = sha256_hex(Json{{"mlp", config_to_json(cfg_)["mlp"]},
                                             {"seed", tc.seed},
                                             {"filter", filter},
                                             {"thresholds", config_to_json(cfg_)["thresholds"]},
                                             {"train", ws_.entry("dataset/train").sha256}}
                                            .dump());
    const std::string logical = "model/" + key;
    if (ws_.is_current(logical, hash) && ws_.is_current(logical + ".meta", hash)) {
      std::istringstream in(read_file_bytes(ws_.path_of(logical)), std::ios::binary);
      const Json meta = Json::parse(read_file_bytes(ws_.path_of(logical + ".meta")));
      MlpModel m{load_params(in), meta.at("tau_nn").get<double>(), meta.at("best_epoch").get<std::size_t>(),
                 meta.at("best_validation_rmse").get<double>()};
      return mlps_.emplace(key, std::move(m)).first->second;
    }
    const Dataset data = train.filter(ConcurrenceFilter::parse(filter));
    note("training regressor " + key + " on " + std::to_string(data.size()) + " states, " +
         std::to_string(tc.epochs) + " epochs");
    const auto t0 = std::chrono::steady_clock::now();
    const FeatureMatrix x = data.features();
    TrainResult r = qent::train(x, data.concurrence, tc);
    note("regressor " + key + " done in " + seconds_since(t0) + ", best epoch " + std::to_string(r.best_epoch));

    MlpModel m{r.params, cfg_.thresholds.tau_nn, r.best_epoch, r.best_validation_rmse};
    if (cfg_.tune_tau_nn && !r.validation_rows.empty()) {
      const Dataset val = data.take(r.validation_rows);
      m.tau_nn = tune_tau_nn(predict_concurrence(m.params, val.features()), val.concurrence, cfg_.thresholds.tau,
                             cfg_.thresholds.tau_nn);
    }
    Json curve = Json::array();
    for (const EpochRecord& e : r.curve) {
      curve.push_back({{"epoch", e.epoch},
                       {"train_loss", std::isfinite(e.train_loss) ? Json(e.train_loss) : Json(nullptr)},
                       {"validation_rmse", e.validation_rmse}});
    }
    const Json meta{{"tau_nn", m.tau_nn},
                    {"tau_nn_tuned", cfg_.tune_tau_nn},
                    {"best_epoch", m.best_epoch},
                    {"best_validation_rmse", m.best_validation_rmse},
                    {"curve", curve}};
    ws_.put(logical, key + ".qmlp", detail::to_bytes([&](std::ostream& o) { save_params(o, m.params); }), hash,
            "train");
    ws_.put(logical + ".meta", key + ".json", meta.dump(2) + "\n", hash, "train");
    return mlps_.emplace(key, std::move(m)).first->second;
  }

  bool is_forest(const std::string& model) const { return cfg_.forests.contains(model); }

  // -------------------------------------------------------------------------
  // Evaluation

  /// Metrics of a model on the test states admitted by its training filter.
  MetricReport evaluate(const std::string& model, const std::string& filter = "all") {
    const Dataset test = test_set().filter(ConcurrenceFilter::parse(filter));
    if (is_forest(model)) {
      return evaluate_forest(forest(model, filter), test.features(), test.concurrence, cfg_.thresholds, cfg_.threads);
    }
    if (model == "mlp") return evaluate_mlp(mlp(filter).params, test.features(), test.concurrence, thresholds(filter));
    fail(ErrorKind::InvalidArgument, "unknown model '" + model + "'");
  }

  std::vector<std::filesystem::path> write_metrics(const std::string& model, const std::string& filter = "all") {
    const MetricReport r = evaluate(model, filter);
    const std::string key = model + filter_tag(filter);
    Json j = metrics_json(r);
    j["model"] = model;
    j["filter"] = filter;
    if (model == "mlp") j["tau_nn"] = mlp(filter).tau_nn;
    return {put_text("metrics/" + key, "metrics_" + key + ".json", j.dump(2) + "\n", "evaluate"),
            put_text("metrics/" + key + ".bins", "bins_" + key + ".csv", bins_csv(r.per_bin), "evaluate")};
  }

  ClassificationThresholds thresholds(const std::string& filter = "all") {
    return {cfg_.thresholds.tau, mlp(filter).tau_nn};
  }

  // -------------------------------------------------------------------------
  // Explanations

  std::vector<double> mdi(const std::string& model, const std::string& filter = "all") {
    require_forest(model, "mdi");
    return forest(model, filter).mdi();
  }

  /// E^P on the test states admitted by the training filter.
  std::vector<double> perturbation_importance(const std::string& model, const std::string& filter = "all") {
    const Dataset test = test_set().filter(ConcurrenceFilter::parse(filter));
    const PerturbationSetup setup{cfg_.perturbation.sigma, cfg_.perturbation.n_trials, cfg_.model_seed("perturb"),
                                  cfg_.threads};
    if (is_forest(model)) {
      return perturbation_importance_rf(forest(model, filter), test.features(), test.labels(cfg_.thresholds.tau),
                                        setup);
    }
    if (model == "mlp") return perturbation_importance_nn(mlp(filter).params, test.features(), test.concurrence, setup);
    fail(ErrorKind::MethodModelMismatch, "perturbation needs a forest or the regressor, not '" + model + "'");
  }

  /// Test states admitted by `filter`, subsampled to `count` rows.
  FeatureMatrix explain_samples(const std::string& filter, std::size_t count) {
    const Dataset d = test_set().filter(ConcurrenceFilter::parse(filter));
    if (d.size() == 0) fail(ErrorKind::EmptyInput, "no test states match '" + filter + "'");
    return sample_rows(d.features(), count, cfg_.model_seed("subset:" + filter), stream::kSubset);
  }

  FeatureMatrix background(std::size_t count) {
    return sample_rows(train_set().features(), count, cfg_.model_seed("background"), stream::kBackground);
  }

  /// Per-sample exact Shapley values of `model` (a forest, "mlp" or
  /// "analytic") on test states matching `filter`.
  std::vector<ShapleyResult> shapley(const std::string& model, const std::string& filter, bool with_interactions,
                                     std::optional<std::size_t> count = std::nullopt) {
    const ExplainConfig& e = cfg_.explain;
    if (is_forest(model)) {
      const RandomForest& f = forest(model);
      const FeatureMatrix bg = background(e.background_size);
      const FeatureMatrix xs = explain_samples(filter, count.value_or(e.samples_per_subset));
      return explain_rows(
          xs, [&](std::span<const double> x) { return forest_shapley(f, bg, x, with_interactions); }, cfg_.threads);
    }
    if (model == "mlp" || model == "analytic") {
      const bool nn = model == "mlp";
      ValueFunction vf;
      vf.predictor = nn ? mlp_predictor(mlp().params) : analytic_predictor();
      vf.background = background(nn ? e.nn_background_size : e.analytic_background_size);
      const FeatureMatrix xs = explain_samples(filter, count.value_or(e.nn_samples_per_subset));
      return explain_rows(
          xs, [&](std::span<const double> x) { return explain_sample(vf, x, with_interactions); }, cfg_.threads);
    }
    fail(ErrorKind::MethodModelMismatch, "Shapley values need a forest, mlp or analytic, not '" + model + "'");
  }

  /// The explain stage: method in mdi | perturb | shap | siv | pca.
  std::vector<std::filesystem::path> explain(const std::string& method, const std::string& model,
                                             const std::string& filter = "all",
                                             std::optional<std::string> subset = std::nullopt) {
    const std::string key = model + filter_tag(filter);
    std::vector<std::filesystem::path> files;
    if (method == "mdi" || method == "perturb") {
      const bool is_mdi = method == "mdi";
      const std::vector<double> v = is_mdi ? mdi(model, filter) : perturbation_importance(model, filter);
      const std::string stem = (is_mdi ? "mdi_" : "ep_") + key;
      Json j = grid_json(v);
      j["model"] = model;
      j["filter"] = filter;
      if (!is_mdi) j["sigma"] = cfg_.perturbation.sigma;
      files.push_back(put_text("explain/" + stem, stem + ".json", j.dump(2) + "\n", "explain"));
      files.push_back(put_text("explain/" + stem + ".csv", stem + ".csv",
                               measurement_table_csv({is_mdi ? "mdi" : "e_p"}, {v}), "explain"));
      return files;
    }
    if (method == "shap" || method == "siv") {
      const bool siv = method == "siv";
      if (siv) require_forest(model, "siv");
      if (filter != "all") fail(ErrorKind::InvalidArgument, "Shapley runs explain models trained on all states");
      std::vector<std::pair<std::string, std::string>> subsets;
      if (subset) {
        subsets.push_back({"custom_" + sha256_hex(*subset).substr(0, 8), *subset});
      } else {
        subsets = {{"separable", cfg_.explain.separable_filter}, {"entangled", cfg_.explain.entangled_filter}};
      }
      for (const auto& [name, f] : subsets) {
        const std::vector<ShapleyResult> r = shapley(model, f, siv);
        const GlobalShapley g = summarize_shapley(r);
        const std::string stem = method + "_" + model + "_" + name;
        Json j{{"model", model}, {"subset", f}, {"n_samples", g.n_samples}};
        j["mean_phi"] = grid_json(g.mean_phi);
        j["mean_abs_phi"] = grid_json(g.mean_abs_phi);
        j["max_efficiency_residual"] = max_efficiency_residual(r);
        files.push_back(put_text("explain/" + stem, stem + ".json", j.dump(2) + "\n", "explain"));
        files.push_back(put_text("explain/" + stem + ".samples", stem + "_samples.csv", shapley_long_csv(r), "explain"));
        if (siv) {
          files.push_back(put_text("explain/" + stem + ".table", stem + "_interactions.csv",
                                   interaction_csv(*g.mean_interactions), "explain"));
        }
      }
      return files;
    }
    if (method == "pca") {
      const auto [meas, state] = pca_pair();
      files.push_back(put_text("explain/pca_measurements", "pca_measurements.csv", pca_csv(meas), "explain"));
      files.push_back(put_text("explain/pca_state", "pca_state.csv", pca_csv(state), "explain"));
      return files;
    }
    fail(ErrorKind::InvalidArgument, "unknown explain method '" + method + "'");
  }

  std::pair<PcaResult, PcaResult> pca_pair() {
    const Dataset& train = train_set();
    return {pca(train.features()), pca(state_parameters(train))};
  }

  // -------------------------------------------------------------------------
  // Figure bundles

  FigureReport repro(const std::string& figure) {
    note("reproducing " + figure);
    const auto t0 = std::chrono::steady_clock::now();
    FigureReport r;
    r.figure = figure;
    if (figure == "table1") {
      table1(r);
    } else if (figure == "fig2b") {
      fig2b(r);
    } else if (figure == "fig3") {
      fig3(r);
    } else if (figure == "fig4") {
      fig4(r);
    } else if (figure == "fig5") {
      fig5(r);
    } else if (figure == "fig6") {
      fig6(r);
    } else if (figure == "fig7") {
      fig7(r);
    } else if (figure == "fig10") {
      fig10(r);
    } else {
      fail(ErrorKind::InvalidArgument, "unknown figure '" + figure + "'");
    }
    Json checks = Json::array();
    for (const Check& c : r.checks) {
      checks.push_back({{"criterion", c.criterion}, {"name", c.name}, {"pass", c.pass}, {"detail", c.detail}});
    }
    r.files.push_back(put_text("repro/" + figure + ".checks", figure + "_checks.json", checks.dump(2) + "\n", "repro"));
    note(figure + " done in " + seconds_since(t0));
    return r;
  }

 private:
  void note(const std::string& s) const {
    if (log_) log_(s);
  }

  static std::string seconds_since(std::chrono::steady_clock::time_point t0) {
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return detail::fmt(s, 3) + " s";
  }

  void require_forest(const std::string& model, const std::string& method) const {
    if (!is_forest(model)) {
      fail(ErrorKind::MethodModelMismatch, method + " needs a forest model, got '" + model + "'");
    }
  }

  std::filesystem::path put_text(const std::string& logical, const std::string& name, const std::string& text,
                                 const std::string& stage) {
    return ws_.put(logical, name, text, sha256_hex(text), stage);
  }

  const Dataset& dataset(const std::string& role, std::optional<Dataset>& slot) {
    if (slot) return *slot;
    const DatasetSpec spec = role == "train" ? cfg_.train_spec() : cfg_.test_spec();
    const std::string hash = sha256_hex(detail::spec_json(spec).dump());
    const std::string logical = "dataset/" + role;
    if (ws_.is_current(logical, hash)) {
      std::istringstream in(read_file_bytes(ws_.path_of(logical)), std::ios::binary);
      slot = read_dataset(in).first;
      return *slot;
    }
    note("generating " + role + " set of " + std::to_string(spec.n_total) + " states");
    const auto t0 = std::chrono::steady_clock::now();
    slot = to_dataset(generate_dataset(spec));
    note(role + " set done in " + seconds_since(t0));

    const std::string bytes =
        detail::to_bytes([&](std::ostream& o) { write_dataset(o, *slot, RecordFormat::DensityMatrix); });
    ws_.put(logical, role + ".qds", bytes, hash, "generate");
    std::size_t n_ent = 0;
    for (double c : slot->concurrence) n_ent += c >= kEntanglementThreshold;
    const Json meta{{"spec", detail::spec_json(spec)},
                    {"format", "density_matrix"},
                    {"n", slot->size()},
                    {"n_entangled", n_ent},
                    {"fraction_entangled", static_cast<double>(n_ent) / static_cast<double>(slot->size())},
                    {"sha256", sha256_hex(bytes)}};
    ws_.put(logical + ".meta", role + ".json", meta.dump(2) + "\n", hash, "generate");
    std::ostringstream hist;
    write_histogram_csv(hist, concurrence_histogram(slot->concurrence));
    ws_.put(logical + ".hist", "histogram_" + role + ".csv", hist.str(), hash, "generate");
    return *slot;
  }

  static double max_efficiency_residual(const std::vector<ShapleyResult>& rs) {
    double worst = 0.0;
    for (const ShapleyResult& r : rs) {
      double s = 0.0;
      for (double v : r.phi) s += v;
      worst = std::max(worst, std::abs(s - (r.sample_prediction - r.base_value)));
    }
    return worst;
  }

  // --- table1 --------------------------------------------------------------

  void table1(FigureReport& r) {
    std::ostringstream csv;
    csv << "model,accuracy,precision,recall,rmse\n";
    std::map<std::string, MetricReport> m;
    for (const std::string name : {"rf1", "rf2", "rf3", "mlp"}) {
      m[name] = evaluate(name);
      csv << name << ',' << format_real(m[name].accuracy) << ',' << format_real(m[name].precision) << ','
          << format_real(m[name].recall) << ',' << format_real(m[name].rmse) << '\n';
      for (const auto& f : write_metrics(name)) r.files.push_back(f);
    }
    r.files.push_back(put_text("repro/table1", "table1.csv", csv.str(), "repro"));
    const MetricReport& rf1 = m["rf1"];
    const MetricReport& nn = m["mlp"];
    auto in = [](double v, double lo, double hi) { return v >= lo && v <= hi; };
    r.checks.push_back({4, "rf1 accuracy in [0.85, 0.91]", in(rf1.accuracy, 0.85, 0.91), detail::fmt(rf1.accuracy)});
    r.checks.push_back(
        {4, "rf1 precision in [0.85, 0.91]", in(rf1.precision, 0.85, 0.91), detail::fmt(rf1.precision)});
    r.checks.push_back({4, "rf1 recall in [0.87, 0.93]", in(rf1.recall, 0.87, 0.93), detail::fmt(rf1.recall)});
    r.checks.push_back({4, "mlp accuracy in [0.90, 0.94]", in(nn.accuracy, 0.90, 0.94),
                        detail::fmt(nn.accuracy) + " at tau_nn=" + detail::fmt(mlp().tau_nn)});
    const double best_rf = std::max({m["rf1"].accuracy, m["rf2"].accuracy, m["rf3"].accuracy});
    r.checks.push_back({4, "mlp accuracy above every forest", nn.accuracy > best_rf,
                        "mlp " + detail::fmt(nn.accuracy) + " vs best forest " + detail::fmt(best_rf)});
  }

  // --- fig2b ---------------------------------------------------------------

  void fig2b(FigureReport& r) {
    const Dataset& test = test_set();
    const std::size_t n = std::min<std::size_t>(200, test.size());
    std::vector<DensityMatrix> states;
    states.reserve(n);
    for (std::size_t i = 0; i < n; ++i) states.push_back(validate_density_matrix(test.states[i], 1e-9));
    const ErrorMaps maps = error_propagation_map(states, 0.01, 20, cfg_.model_seed("fig2b"), NoiseKind::Gaussian,
                                                 cfg_.threads);
    Json j{{"sigma", 0.01}, {"noise", "gaussian"}, {"n_states", n}, {"n_trials", 20}};
    std::ostringstream csv;
    csv << "measurement,row,col,mean_abs_error\n";
    for (std::size_t k = 0; k < kNumMeasurements; ++k) {
      Json grid = Json::array();
      for (std::size_t a = 0; a < 4; ++a) {
        Json row = Json::array();
        for (std::size_t b = 0; b < 4; ++b) {
          row.push_back(maps[k][4 * a + b]);
          csv << measurement_label(k) << ',' << a << ',' << b << ',' << format_real(maps[k][4 * a + b]) << '\n';
        }
        grid.push_back(row);
      }
      j["maps"][measurement_label(k)] = grid;
    }
    r.files.push_back(put_text("repro/fig2b", "fig2b.json", j.dump(2) + "\n", "repro"));
    r.files.push_back(put_text("repro/fig2b.csv", "fig2b.csv", csv.str(), "repro"));

    // Entries (0,3), (1,2) and their conjugates are the non-local coherences.
    auto nonlocal = [](std::size_t e) { return e == 3 || e == 6 || e == 9 || e == 12; };
    double worst_other = 0.0;
    bool coherences_move = true;
    for (std::size_t k : block_indices(BlockId::D)) {
      for (std::size_t e = 0; e < 16; ++e) {
        if (nonlocal(e)) {
          coherences_move = coherences_move && maps[k][e] > 1e-12;
        } else {
          worst_other = std::max(worst_other, maps[k][e]);
        }
      }
    }
    r.checks.push_back({3, "block D noise reaches only the non-local coherences",
                        worst_other <= 1e-12 && coherences_move,
                        "max other-entry error " + detail::fmt(worst_other)});
    std::size_t touched = 0;
    for (std::size_t e = 0; e < 16; ++e) {
      bool any = false;
      for (std::size_t k : block_indices(BlockId::A)) any = any || maps[k][e] > 1e-12;
      touched += any;
    }
    r.checks.push_back(
        {3, "block A noise reaches >= 12 of 16 entries", touched >= 12, std::to_string(touched) + " entries"});
  }

  // --- fig3 ----------------------------------------------------------------

  void fig3(FigureReport& r) {
    const MetricReport m = evaluate("rf1");
    const MetricReport nn = evaluate("mlp");
    std::ostringstream csv;
    csv << "model,c_lo,c_hi,count,accuracy\n";
    for (const auto& [name, rep] : {std::pair{"rf1", &m}, std::pair{"mlp", &nn}}) {
      for (const BinAccuracy& b : rep->per_bin) {
        csv << name << ',' << format_real(b.lo) << ',' << format_real(b.hi) << ',' << b.count << ','
            << format_real(b.accuracy) << '\n';
      }
    }
    r.files.push_back(put_text("repro/fig3", "fig3.csv", csv.str(), "repro"));
    double worst = 1.0;
    std::string worst_bin = "none";
    std::optional<double> separable;
    for (const BinAccuracy& b : m.per_bin) {
      if (b.lo == 0.0) separable = b.accuracy;
      if (b.lo >= 0.35 - 1e-12 && b.accuracy < worst) {
        worst = b.accuracy;
        worst_bin = "[" + detail::fmt(b.lo, 3) + ", " + detail::fmt(b.hi, 3) + ")";
      }
    }
    r.checks.push_back(
        {5, "rf1 bins with C >= 0.35 at accuracy >= 0.99", worst >= 0.99, "lowest " + detail::fmt(worst) + " in " + worst_bin});
    const double sep = separable.value_or(-1.0);
    r.checks.push_back({5, "rf1 separable accuracy in [0.82, 0.90]", sep >= 0.82 && sep <= 0.90, detail::fmt(sep)});
  }

  // --- fig4: impurity importance -------------------------------------------

  void fig4(FigureReport& r) {
    const std::string rf = "rf1";
    const std::vector<double> full = mdi(rf);
    const std::vector<double> restricted = mdi(rf, cfg_.restricted_filter);
    for (const auto& f : explain("mdi", rf)) r.files.push_back(f);
    for (const auto& f : explain("mdi", rf, cfg_.restricted_filter)) r.files.push_back(f);
    r.files.push_back(put_text("repro/fig4", "fig4_mdi.csv",
                               measurement_table_csv({"full", "restricted"}, {full, restricted}), "repro"));
    double ratio[2] = {0, 0};
    int k = 0;
    for (const auto* v : {&full, &restricted}) {
      const auto b = block_means(*v);
      const std::string which = k == 0 ? "full" : "restricted";
      const bool order = b[0] > b[1] && b[0] > b[2] && detail::argmin4(b) == 3;
      r.checks.push_back({6, "MDI " + which + ": A > B, A > C, D smallest", order, detail::block_summary(*v)});
      ratio[k++] = b[0] / b[3];
    }
    r.checks.push_back({6, "MDI A/D ratio grows on the restricted set", ratio[1] > ratio[0],
                        "full " + detail::fmt(ratio[0]) + ", restricted " + detail::fmt(ratio[1])});
  }

  // --- fig5: perturbation importance ---------------------------------------

  void fig5(FigureReport& r) {
    std::vector<std::string> names;
    std::vector<std::vector<double>> series;
    for (const std::string model : {"rf1", "mlp"}) {
      for (const std::string filter : {std::string("all"), cfg_.restricted_filter}) {
        const std::vector<double> v = perturbation_importance(model, filter);
        const std::string which = filter == "all" ? "full" : "restricted";
        names.push_back(model + "_" + which);
        series.push_back(v);
        const auto b = block_means(v);
        if (model == "rf1") {
          r.checks.push_back(
              {7, "E^P rf1 " + which + ": A largest", detail::argmax4(b) == 0, detail::block_summary(v)});
        } else {
          r.checks.push_back({7, "E^P mlp " + which + ": D largest, A smallest",
                              detail::argmax4(b) == 3 && detail::argmin4(b) == 0, detail::block_summary(v)});
        }
        Json j = grid_json(v);
        j["model"] = model;
        j["filter"] = filter;
        j["sigma"] = cfg_.perturbation.sigma;
        const std::string stem = "ep_" + model + filter_tag(filter);
        r.files.push_back(put_text("explain/" + stem, stem + ".json", j.dump(2) + "\n", "repro"));
      }
    }
    r.files.push_back(put_text("repro/fig5", "fig5_ep.csv", measurement_table_csv(names, series), "repro"));
  }

  // --- fig6: Shapley values ------------------------------------------------

  void fig6(FigureReport& r) {
    const ExplainConfig& e = cfg_.explain;
    std::vector<std::string> names;
    std::vector<std::vector<double>> series;
    auto record = [&](const std::string& name, const GlobalShapley& g) {
      names.push_back(name + "_mean_phi");
      series.push_back(g.mean_phi);
      names.push_back(name + "_mean_abs_phi");
      series.push_back(g.mean_abs_phi);
    };

    // Panels: forest, regressor and analytic predictor on both subsets.
    std::map<std::string, std::vector<ShapleyResult>> runs;
    for (const std::string model : {"rf1", "mlp", "analytic"}) {
      for (const auto& [sub, filter] :
           {std::pair{std::string("separable"), e.separable_filter}, std::pair{std::string("entangled"), e.entangled_filter}}) {
        note("Shapley values: " + model + " on " + sub + " states");
        runs[model + "_" + sub] = shapley(model, filter, false);
        record(model + "_" + sub, summarize_shapley(runs[model + "_" + sub]));
      }
    }
    const GlobalShapley rf_ent = summarize_shapley(runs["rf1_entangled"]);
    const auto abs_blocks = block_means(rf_ent.mean_abs_phi);
    r.checks.push_back({8, "rf1 entangled |phi| largest in block A", detail::argmax4(abs_blocks) == 0,
                        detail::block_summary(rf_ent.mean_abs_phi)});
    const GlobalShapley qst_ent = summarize_shapley(runs["analytic_entangled"]);
    note("analytic entangled |phi| blocks (informative): " + detail::block_summary(qst_ent.mean_abs_phi));

    // Interaction values of the smaller forest on separable states.
    const std::string siv = e.interaction_forest;
    note("interaction values: " + siv + " on separable states");
    const std::vector<ShapleyResult> siv_runs = shapley(siv, e.separable_filter, true);
    const GlobalShapley siv_sep = summarize_shapley(siv_runs);
    const InteractionTable& t = *siv_sep.mean_interactions;
    const double t0011 = t(0, 5), t0110 = t(1, 4);
    r.checks.push_back({8, "interaction (m_00, m_11) negative on separable states", t0011 < 0.0, detail::fmt(t0011)});
    r.checks.push_back({8, "interaction (m_01, m_10) negative on separable states", t0110 < 0.0, detail::fmt(t0110)});
    r.files.push_back(put_text("repro/fig6.siv", "fig6_siv_separable.csv", interaction_csv(t), "repro"));

    // Axioms on random test states.
    const std::string all = "all";
    const std::size_t n_ax = e.axiom_samples;
    note("axiom checks on " + std::to_string(n_ax) + " states");
    const FeatureMatrix xs = explain_samples(all, n_ax);
    const FeatureMatrix bg = background(e.background_size);
    const RandomForest& rf = forest("rf1");
    std::vector<ShapleyResult> one(xs.rows), zero(xs.rows);
    parallel_for(xs.rows, cfg_.threads, [&](std::size_t i) {
      one[i] = forest_shapley(rf, bg, xs.row(i), false, true);
      zero[i] = forest_shapley(rf, bg, xs.row(i), false, false);
    });
    const double eff_rf = max_efficiency_residual(one);
    double anti = 0.0;
    for (std::size_t i = 0; i < xs.rows; ++i) {
      for (std::size_t k = 0; k < kNumMeasurements; ++k) anti = std::max(anti, std::abs(one[i].phi[k] + zero[i].phi[k]));
    }
    const double eff_nn = max_efficiency_residual(shapley("mlp", all, false, n_ax));
    const double eff_qst = max_efficiency_residual(shapley("analytic", all, false, n_ax));
    r.checks.push_back({8, "efficiency residual <= 1e-8 (rf1, mlp, analytic)",
                        eff_rf <= 1e-8 && eff_nn <= 1e-8 && eff_qst <= 1e-8,
                        "rf1 " + detail::fmt(eff_rf) + ", mlp " + detail::fmt(eff_nn) + ", analytic " +
                            detail::fmt(eff_qst)});
    r.checks.push_back({8, "class-sign antisymmetry", anti <= 1e-12, "max |phi_1 + phi_0| " + detail::fmt(anti)});

    // Additive model with random coefficients: phi_i = a_i (x_i - mean_b x_i).
    Rng rng = derive_rng(cfg_.model_seed("additive"));
    std::vector<double> a(kNumMeasurements);
    for (double& v : a) v = std::uniform_real_distribution<double>(-1.0, 1.0)(rng);
    ValueFunction lin;
    lin.background = bg;
    lin.predictor = [&a](const FeatureMatrix& rows, std::span<double> out) {
      for (std::size_t i = 0; i < rows.rows; ++i) {
        double s = 0.0;
        for (std::size_t k = 0; k < rows.cols; ++k) s += a[k] * rows(i, k);
        out[i] = s;
      }
    };
    double additive = 0.0;
    for (std::size_t i = 0; i < std::min<std::size_t>(5, xs.rows); ++i) {
      const ShapleyResult s = explain_sample(lin, xs.row(i), false);
      for (std::size_t k = 0; k < kNumMeasurements; ++k) {
        double mean = 0.0;
        for (std::size_t b = 0; b < bg.rows; ++b) mean += bg(b, k);
        mean /= static_cast<double>(bg.rows);
        additive = std::max(additive, std::abs(s.phi[k] - a[k] * (xs(i, k) - mean)));
      }
    }
    r.checks.push_back({8, "additive model closed form within 1e-10", additive <= 1e-10, detail::fmt(additive)});

    // Interaction identities on the per-sample tables.
    double decomposition = 0.0, symmetry = 0.0;
    for (const ShapleyResult& s : siv_runs) {
      const InteractionTable& it = *s.interactions;
      for (std::size_t i = 0; i < it.n; ++i) {
        double row = 0.0;
        for (std::size_t j = 0; j < it.n; ++j) {
          row += it(i, j);
          symmetry = std::max(symmetry, std::abs(it(i, j) - it(j, i)));
        }
        decomposition = std::max(decomposition, std::abs(row - s.phi[i]));
      }
    }
    // The tree path must agree with plain enumeration of the same forest.
    ValueFunction brute;
    brute.predictor = forest_predictor(forest(siv));
    brute.background = sample_rows(bg, 2, cfg_.model_seed("crosscheck"));
    const ShapleyResult slow = explain_sample(brute, xs.row(0), true);
    const ShapleyResult fast = forest_shapley(forest(siv), brute.background, xs.row(0), true);
    double cross = 0.0;
    for (std::size_t k = 0; k < fast.interactions->v.size(); ++k) {
      cross = std::max(cross, std::abs(fast.interactions->v[k] - slow.interactions->v[k]));
    }
    for (std::size_t k = 0; k < kNumMeasurements; ++k) cross = std::max(cross, std::abs(fast.phi[k] - slow.phi[k]));
    r.checks.push_back({8, "interaction rows sum to phi within 1e-8", decomposition <= 1e-8 && cross <= 1e-8,
                        "row-sum residual " + detail::fmt(decomposition) + ", tree path vs enumeration " +
                            detail::fmt(cross)});
    r.checks.push_back({8, "interaction symmetry within 1e-10", symmetry <= 1e-10, detail::fmt(symmetry)});

    r.files.push_back(put_text("repro/fig6", "fig6_shapley.csv", measurement_table_csv(names, series), "repro"));
  }

  // --- fig7: PCA -----------------------------------------------------------

  void fig7(FigureReport& r) {
    for (const auto& f : explain("pca", "none")) r.files.push_back(f);
    const auto [meas, state] = pca_pair();
    const std::size_t jm = meas.components_for(0.9), js = state.components_for(0.9);
    r.checks.push_back({9, "measurements reach 90% at j = 8 +- 1", jm >= 7 && jm <= 9, "j = " + std::to_string(jm)});
    r.checks.push_back({9, "state parameters reach 90% at j = 13 +- 1", js >= 12 && js <= 14, "j = " + std::to_string(js)});
    const double r15 = state.cumulative.at(14), r16 = state.cumulative.at(15);
    r.checks.push_back({9, "state R_15 = 1 within 1e-6", std::abs(r15 - 1.0) <= 1e-6, format_real(r15)});
    r.checks.push_back({9, "state R_16 = 1", std::abs(r16 - 1.0) <= 1e-10, format_real(r16)});
  }

  // --- fig10: accuracy under noise -----------------------------------------

  void fig10(FigureReport& r) {
    const Dataset& test = test_set();
    const std::vector<SigmaRow> rows =
        accuracy_vs_sigma(forest("rf1"), mlp().params, test.features(), test.concurrence, cfg_.noise_sweep.sigmas,
                          thresholds(), cfg_.noise_sweep.n_trials, cfg_.model_seed("fig10"), cfg_.threads);
    r.files.push_back(put_text("repro/fig10", "fig10.csv", sigma_table_csv(rows), "repro"));
    r.files.push_back(put_text("repro/fig10.per_index", "fig10_per_index.csv", sigma_per_index_csv(rows), "repro"));
    std::ostringstream curve;
    for (const SigmaRow& s : rows) {
      curve << "s=" << s.sigma << ": rf " << detail::fmt(s.accuracy_rf) << " nn " << detail::fmt(s.accuracy_nn) << "; ";
    }
    const SigmaRow* clean = nullptr;
    for (const SigmaRow& s : rows) {
      if (s.sigma == 0.0) clean = &s;
    }
    r.checks.push_back({10, "clean accuracy: mlp above rf1", clean && clean->accuracy_nn > clean->accuracy_rf,
                        clean ? "rf " + detail::fmt(clean->accuracy_rf) + ", nn " + detail::fmt(clean->accuracy_nn)
                              : "sweep lacks sigma = 0"});
    bool crossover = false;
    bool monotone = true;
    for (std::size_t k = 0; k < rows.size(); ++k) {
      if (rows[k].sigma > 0.0 && rows[k].accuracy_rf >= rows[k].accuracy_nn) crossover = true;
      if (k > 0 && rows[k].accuracy_rf > rows[k - 1].accuracy_rf + 0.01) monotone = false;
    }
    r.checks.push_back({10, "rf1 matches or beats mlp at some sigma > 0", crossover, curve.str()});
    r.checks.push_back({10, "rf1 accuracy non-increasing in sigma (tol 0.01)", monotone, curve.str()});
  }

  ExperimentConfig cfg_;
  Workspace ws_;
  Logger log_;
  std::optional<Dataset> train_, test_;
  std::map<std::string, RandomForest> forests_;
  std::map<std::string, MlpModel> mlps_;
};

}  // namespace qent
