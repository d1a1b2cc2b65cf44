// qent: command-line driver for dataset generation, training, evaluation,
// explanations and figure bundles.

#include <CLI11.hpp>

#include <chrono>
#include <fstream>
#include <iostream>

#include "qent/pipeline.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitOther = 1;
constexpr int kExitValidation = 2;
constexpr int kExitCheckFailed = 3;
constexpr int kExitIo = 4;

int exit_code_for(qent::ErrorKind k) {
  using qent::ErrorKind;
  switch (k) {
    case ErrorKind::IoFailure:
    case ErrorKind::FormatError:
      return kExitIo;
    case ErrorKind::InvalidConfig:
    case ErrorKind::InvalidArgument:
    case ErrorKind::MethodModelMismatch:
    case ErrorKind::SpecInfeasible:
    case ErrorKind::EmptyInput:
    case ErrorKind::NonFiniteInput:
      return kExitValidation;
    default:
      return kExitOther;
  }
}

struct GlobalOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool paper_scale = false;
  std::optional<std::size_t> threads;
  bool quiet = false;
};

qent::ExperimentConfig resolve_config(const GlobalOptions& g) {
  qent::ExperimentConfig c = g.config.empty() ? qent::ExperimentConfig{} : qent::load_config(g.config);
  if (g.seed) c.seed = *g.seed;
  if (g.threads) c.threads = *g.threads;
  if (g.paper_scale) qent::apply_paper_scale(c);
  if (!g.out.empty()) c.output_dir = g.out;
  qent::validate(c);
  return c;
}

qent::Pipeline open_pipeline(const GlobalOptions& g) {
  qent::ExperimentConfig c = resolve_config(g);
  const std::string dir = c.output_dir;
  const auto start = std::chrono::steady_clock::now();
  qent::Logger log;
  if (!g.quiet) {
    log = [start](const std::string& s) {
      const double t = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      std::cerr << "[" << std::fixed << std::setprecision(1) << t << "s] " << s << '\n';
    };
  }
  return qent::Pipeline(std::move(c), dir, log);
}

void print_files(const std::vector<std::filesystem::path>& files) {
  for (const auto& f : files) std::cout << f.string() << '\n';
}

void print_metrics(const std::string& model, const qent::MetricReport& r) {
  std::cout << model << ": accuracy " << r.accuracy << ", precision " << r.precision << ", recall " << r.recall
            << ", rmse " << r.rmse << '\n';
}

int inspect(const GlobalOptions& g, const std::string& path) {
  if (path.empty()) {
    const qent::ExperimentConfig c = resolve_config(g);
    const std::filesystem::path m = std::filesystem::path(c.output_dir) / "manifest.json";
    if (!std::filesystem::exists(m)) {
      std::cout << qent::config_to_json(c).dump(2) << '\n';
      return kExitOk;
    }
    const auto j = nlohmann::json::parse(qent::read_file_bytes(m));
    std::cout << "run directory " << c.output_dir << ", config sha256 " << j.value("config_sha256", "") << '\n';
    if (j.contains("artifacts")) {
      for (const auto& [k, v] : j["artifacts"].items()) {
        std::cout << "  " << k << "  " << v["file"].get<std::string>() << "  " << v["sha256"].get<std::string>().substr(0, 16)
                  << "  " << v["stage"].get<std::string>() << '\n';
      }
    }
    return kExitOk;
  }
  const std::string bytes = qent::read_file_bytes(path);
  std::istringstream in(bytes, std::ios::binary);
  const std::string magic = bytes.substr(0, 4);
  std::cout << path << "  sha256 " << qent::sha256_hex(bytes) << '\n';
  if (magic == qent::kDatasetMagic) {
    const auto [d, fmt] = qent::read_dataset(in);
    std::size_t ent = 0;
    for (double c : d.concurrence) ent += c >= qent::kEntanglementThreshold;
    std::cout << "dataset: " << d.size() << " records ("
              << (fmt == qent::RecordFormat::DensityMatrix ? "density matrices" : "measurements") << "), " << ent
              << " entangled\n";
  } else if (magic == qent::kForestMagic) {
    const qent::RandomForest f = qent::RandomForest::load(in);
    std::cout << "forest: " << f.trees().size() << " trees, " << f.n_features() << " features\n"
              << "config: " << qent::forest_to_json(f.config()).dump() << '\n'
              << "mdi blocks: " << qent::detail::block_summary(f.mdi()) << '\n';
  } else if (magic == qent::kMlpMagic) {
    const qent::MlpParams p = qent::load_params(in);
    std::cout << "regressor: " << p.w1.cols() << "-" << p.w1.rows() << "-" << p.w2.rows() << "-" << p.w3.rows()
              << '\n';
  } else {
    std::cout << nlohmann::json::parse(bytes).dump(2) << '\n';
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Entanglement classification experiments on two-qubit tomography data"};
  app.require_subcommand(1);
  GlobalOptions g;
  app.add_option("--config", g.config, "JSON configuration file")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Experiment seed");
  app.add_option("--out", g.out, "Output directory");
  app.add_flag("--paper-scale", g.paper_scale, "Full published dataset and forest sizes");
  app.add_option("--threads", g.threads, "Worker threads")->check(CLI::PositiveNumber);
  app.add_flag("-q,--quiet", g.quiet, "No progress log on stderr");

  auto* gen = app.add_subcommand("generate", "Sample train and test datasets");

  std::string model = "rf1", filter = "all";
  auto* train = app.add_subcommand("train", "Train a model and write test metrics");
  train->add_option("--model", model, "rf1, rf2, rf3, siv, mlp or all");
  train->add_option("--filter", filter, "Concurrence filter for the training states");

  auto* evaluate = app.add_subcommand("evaluate", "Test-set metrics of a trained model");
  evaluate->add_option("--model", model, "rf1, rf2, rf3, siv or mlp");
  evaluate->add_option("--filter", filter, "Training filter of the model");

  std::string method;
  std::optional<std::string> subset;
  auto* explain = app.add_subcommand("explain", "Feature importance and Shapley reports");
  explain->add_option("--method", method, "mdi, perturb, shap, siv or pca")->required();
  explain->add_option("--model", model, "rf1, rf2, rf3, siv, mlp or analytic");
  explain->add_option("--filter", filter, "Training filter of the model");
  explain->add_option("--subset", subset, "Concurrence filter for explained states (shap, siv)");

  std::vector<std::string> figures;
  auto* repro = app.add_subcommand("repro", "Data and checks behind a figure or table");
  repro->add_option("figure", figures, "table1, fig2b, fig3, fig4, fig5, fig6, fig7, fig10 or all")->required();

  std::string inspect_path;
  auto* insp = app.add_subcommand("inspect", "Describe a run directory or an artifact file");
  insp->add_option("path", inspect_path, "Artifact file; the run record when omitted");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitValidation;
  }

  try {
    if (*insp) return inspect(g, inspect_path);
    qent::Pipeline p = open_pipeline(g);
    if (*gen) {
      print_files(p.generate());
    } else if (*train) {
      std::vector<std::string> models;
      if (model == "all") {
        for (const auto& [name, f] : p.config().forests) models.push_back(name);
        models.push_back("mlp");
      } else {
        models.push_back(model);
      }
      for (const auto& m : models) {
        if (p.is_forest(m)) {
          p.forest(m, filter);
        } else if (m == "mlp") {
          p.mlp(filter);
        } else {
          qent::fail(qent::ErrorKind::InvalidArgument, "unknown model '" + m + "'");
        }
        print_files({p.workspace().path_of("model/" + m + p.filter_tag(filter))});
        print_files(p.write_metrics(m, filter));
        print_metrics(m, p.evaluate(m, filter));
      }
    } else if (*evaluate) {
      print_files(p.write_metrics(model, filter));
      print_metrics(model, p.evaluate(model, filter));
    } else if (*explain) {
      print_files(p.explain(method, model, filter, subset));
    } else if (*repro) {
      if (figures.size() == 1 && figures[0] == "all") figures = qent::figure_names();
      bool ok = true;
      for (const auto& fig : figures) {
        const qent::FigureReport r = p.repro(fig);
        print_files(r.files);
        for (const qent::Check& c : r.checks) {
          std::cout << (c.pass ? "[PASS] " : "[FAIL] ") << fig << " criterion " << c.criterion << ": " << c.name
                    << " (" << c.detail << ")\n";
        }
        ok = ok && r.passed();
      }
      return ok ? kExitOk : kExitCheckFailed;
    }
    return kExitOk;
  } catch (const qent::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e.kind());
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitOther;
  }
}
