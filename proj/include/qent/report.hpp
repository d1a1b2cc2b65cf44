#pragma once

// Text exports: CSV tables with header rows and JSON 4x4 grids keyed by
// measurement label, all numbers at full precision.

#include <json.hpp>

#include <array>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "qent/dataset.hpp"
#include "qent/evalx.hpp"
#include "qent/explain.hpp"
#include "qent/tomography.hpp"

namespace qent {

inline std::string measurement_label(std::size_t flat) {
  return "m_" + std::to_string(flat / 4) + std::to_string(flat % 4);
}

/// {"m_00": v, ..., "grid": [[row 0], ...], "block_means": {"A": ...}}.
inline nlohmann::json grid_json(std::span<const double> values) {
  if (values.size() != kNumMeasurements) fail(ErrorKind::InvalidArgument, "grid needs 16 values");
  nlohmann::json j;
  nlohmann::json grid = nlohmann::json::array();
  for (std::size_t r = 0; r < 4; ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t c = 0; c < 4; ++c) {
      j[measurement_label(4 * r + c)] = values[4 * r + c];
      row.push_back(values[4 * r + c]);
    }
    grid.push_back(row);
  }
  j["grid"] = grid;
  const auto means = block_means(values);
  j["block_means"] = {{"A", means[0]}, {"B", means[1]}, {"C", means[2]}, {"D", means[3]}};
  return j;
}

/// One row per measurement: label, then one column per named series.
inline std::string measurement_table_csv(const std::vector<std::string>& names,
                                         const std::vector<std::vector<double>>& series) {
  std::ostringstream s;
  s << "measurement,block";
  for (const auto& n : names) s << ',' << n;
  s << '\n';
  for (std::size_t k = 0; k < kNumMeasurements; ++k) {
    s << measurement_label(k) << ',' << "ABCD"[static_cast<int>(block_of(k))];
    for (const auto& v : series) s << ',' << format_real(v[k]);
    s << '\n';
  }
  return s.str();
}

inline std::string interaction_csv(const InteractionTable& t) {
  std::ostringstream s;
  s << "feature";
  for (std::size_t j = 0; j < t.n; ++j) s << ',' << measurement_label(j);
  s << '\n';
  for (std::size_t i = 0; i < t.n; ++i) {
    s << measurement_label(i);
    for (std::size_t j = 0; j < t.n; ++j) s << ',' << format_real(t(i, j));
    s << '\n';
  }
  return s.str();
}

/// Long-format per-sample Shapley values: sample id, feature, phi.
inline std::string shapley_long_csv(const std::vector<ShapleyResult>& results) {
  std::ostringstream s;
  s << "sample,feature,phi\n";
  for (std::size_t k = 0; k < results.size(); ++k) {
    for (std::size_t i = 0; i < results[k].phi.size(); ++i) {
      s << k << ',' << measurement_label(i) << ',' << format_real(results[k].phi[i]) << '\n';
    }
  }
  return s.str();
}

inline std::string pca_csv(const PcaResult& p) {
  std::ostringstream s;
  s << "j,r_j,R_j\n";
  for (std::size_t k = 0; k < p.cumulative.size(); ++k) {
    s << k + 1 << ',' << format_real(p.explained_variance_ratio[k]) << ',' << format_real(p.cumulative[k]) << '\n';
  }
  return s.str();
}

inline std::string bins_csv(const std::vector<BinAccuracy>& bins) {
  std::ostringstream s;
  s << "c_lo,c_hi,count,accuracy\n";
  for (const auto& b : bins) {
    s << format_real(b.lo) << ',' << format_real(b.hi) << ',' << b.count << ',' << format_real(b.accuracy) << '\n';
  }
  return s.str();
}

inline nlohmann::json metrics_json(const MetricReport& r) {
  nlohmann::json bins = nlohmann::json::array();
  for (const auto& b : r.per_bin) bins.push_back({{"c_lo", b.lo}, {"c_hi", b.hi}, {"count", b.count}, {"accuracy", b.accuracy}});
  return {{"accuracy", r.accuracy}, {"precision", r.precision}, {"recall", r.recall}, {"rmse", r.rmse}, {"per_bin", bins}};
}

inline std::string sigma_table_csv(const std::vector<SigmaRow>& rows) {
  std::ostringstream s;
  s << "sigma,accuracy_rf,accuracy_nn\n";
  for (const auto& r : rows) {
    s << format_real(r.sigma) << ',' << format_real(r.accuracy_rf) << ',' << format_real(r.accuracy_nn) << '\n';
  }
  return s.str();
}

inline std::string sigma_per_index_csv(const std::vector<SigmaRow>& rows) {
  std::ostringstream s;
  s << "sigma,measurement,accuracy_rf,accuracy_nn\n";
  for (const auto& r : rows) {
    for (std::size_t k = 0; k < r.per_index_rf.size(); ++k) {
      s << format_real(r.sigma) << ',' << measurement_label(k) << ',' << format_real(r.per_index_rf[k]) << ','
        << format_real(r.per_index_nn[k]) << '\n';
    }
  }
  return s.str();
}

}  // namespace qent
