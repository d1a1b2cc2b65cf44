#pragma once

// Labelled datasets in model-ready form, their binary/CSV/JSON encodings,
// and the concurrence histogram.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "qent/binary_io.hpp"
#include "qent/errors.hpp"
#include "qent/forest.hpp"
#include "qent/sampler.hpp"
#include "qent/tomography.hpp"

namespace qent {

/// Record layout of a dataset file.
enum class RecordFormat : std::uint8_t { Measurements = 0, DensityMatrix = 1 };

/// Samples with both representations kept: states (for PCA, relabeling and
/// analytic predictors) and their noiseless measurement vectors.
struct Dataset {
  std::vector<ComplexMatrix> states;
  std::vector<MeasurementVector> measurements;
  std::vector<double> concurrence;

  std::size_t size() const { return concurrence.size(); }
  bool has_states() const { return states.size() == concurrence.size(); }

  FeatureMatrix features() const {
    FeatureMatrix x(size(), kNumMeasurements);
    for (std::size_t i = 0; i < size(); ++i) {
      std::copy(measurements[i].m.begin(), measurements[i].m.end(), x.row(i).begin());
    }
    return x;
  }

  std::vector<std::uint8_t> labels(double tau = kEntanglementThreshold) const {
    std::vector<std::uint8_t> y(size());
    for (std::size_t i = 0; i < size(); ++i) y[i] = concurrence[i] >= tau ? 1 : 0;
    return y;
  }

  /// Subset of the rows for which keep(concurrence) holds.
  Dataset filter(const std::function<bool(double)>& keep) const {
    Dataset out;
    for (std::size_t i = 0; i < size(); ++i) {
      if (!keep(concurrence[i])) continue;
      if (has_states()) out.states.push_back(states[i]);
      out.measurements.push_back(measurements[i]);
      out.concurrence.push_back(concurrence[i]);
    }
    return out;
  }

  Dataset take(std::span<const std::size_t> rows) const {
    Dataset out;
    for (std::size_t i : rows) {
      if (has_states()) out.states.push_back(states[i]);
      out.measurements.push_back(measurements[i]);
      out.concurrence.push_back(concurrence[i]);
    }
    return out;
  }
};

inline Dataset to_dataset(const std::vector<LabeledState>& samples) {
  Dataset d;
  d.states.reserve(samples.size());
  for (const LabeledState& s : samples) {
    d.states.push_back(s.rho.matrix());
    d.measurements.push_back(measure_all(s.rho));
    d.concurrence.push_back(s.concurrence);
  }
  return d;
}

/// 16 reals per state: 4 diagonals, 6 real and 6 imaginary upper-triangle parts.
inline FeatureMatrix state_parameters(const Dataset& d) {
  if (!d.has_states()) fail(ErrorKind::InvalidArgument, "dataset carries no density matrices");
  FeatureMatrix x(d.size(), 16);
  for (std::size_t i = 0; i < d.size(); ++i) {
    const StateParameters theta = pack_parameters(d.states[i]);
    std::copy(theta.begin(), theta.end(), x.row(i).begin());
  }
  return x;
}

// ---------------------------------------------------------------------------
// Binary encoding: magic, version, format flag, count, then per record 16
// measurement doubles or 32 interleaved re/im doubles, then the concurrence.

inline constexpr std::string_view kDatasetMagic = "QDSF";
inline constexpr std::uint32_t kDatasetFormatVersion = 1;

inline void write_dataset(std::ostream& out, const Dataset& d, RecordFormat format) {
  if (format == RecordFormat::DensityMatrix && !d.has_states()) {
    fail(ErrorKind::InvalidArgument, "density-matrix format needs states");
  }
  bin::write_magic(out, kDatasetMagic);
  bin::write<std::uint32_t>(out, kDatasetFormatVersion);
  bin::write<std::uint8_t>(out, static_cast<std::uint8_t>(format));
  bin::write<std::uint64_t>(out, d.size());
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (format == RecordFormat::Measurements) {
      for (double v : d.measurements[i].m) bin::write<double>(out, v);
    } else {
      for (const Complex& z : d.states[i].data()) {
        bin::write<double>(out, z.real());
        bin::write<double>(out, z.imag());
      }
    }
    bin::write<double>(out, d.concurrence[i]);
  }
  if (!out) fail(ErrorKind::IoFailure, "failed writing dataset");
}

inline std::pair<Dataset, RecordFormat> read_dataset(std::istream& in) {
  bin::expect_magic(in, kDatasetMagic);
  const auto version = bin::read<std::uint32_t>(in);
  if (version != kDatasetFormatVersion) {
    fail(ErrorKind::FormatError, "unsupported dataset version " + std::to_string(version));
  }
  const auto flag = bin::read<std::uint8_t>(in);
  if (flag > 1) fail(ErrorKind::FormatError, "unknown record format flag");
  const auto format = static_cast<RecordFormat>(flag);
  const auto n = bin::read<std::uint64_t>(in);
  Dataset d;
  for (std::uint64_t i = 0; i < n; ++i) {
    if (format == RecordFormat::Measurements) {
      MeasurementVector m;
      for (double& v : m.m) v = bin::read<double>(in);
      d.measurements.push_back(m);
    } else {
      ComplexMatrix rho(4, 4);
      for (Complex& z : rho.data()) {
        const double re = bin::read<double>(in);
        const double im = bin::read<double>(in);
        z = {re, im};
      }
      d.measurements.push_back(measure_matrix(rho));
      d.states.push_back(std::move(rho));
    }
    d.concurrence.push_back(bin::read<double>(in));
  }
  return {std::move(d), format};
}

inline void save_dataset(const std::string& path, const Dataset& d, RecordFormat format) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::IoFailure, "cannot open " + path);
  write_dataset(out, d, format);
}

inline Dataset load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::IoFailure, "cannot open " + path);
  return read_dataset(in).first;
}

/// Full-precision decimal text for exports.
inline std::string format_real(double v) {
  std::ostringstream s;
  s << std::setprecision(17) << v;
  return s.str();
}

inline void write_dataset_csv(std::ostream& out, const Dataset& d, RecordFormat format) {
  if (format == RecordFormat::Measurements) {
    for (int i = 0; i < 4; ++i) {
      for (int j = 0; j < 4; ++j) out << "m_" << i << j << ',';
    }
  } else {
    static const char* kBasis[4] = {"00", "01", "10", "11"};
    for (int r = 0; r < 4; ++r) {
      for (int c = 0; c < 4; ++c) out << "re_" << kBasis[r] << '_' << kBasis[c] << ',';
    }
    for (int r = 0; r < 4; ++r) {
      for (int c = 0; c < 4; ++c) out << "im_" << kBasis[r] << '_' << kBasis[c] << ',';
    }
  }
  out << "concurrence\n";
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (format == RecordFormat::Measurements) {
      for (double v : d.measurements[i].m) out << format_real(v) << ',';
    } else {
      for (const Complex& z : d.states[i].data()) out << format_real(z.real()) << ',';
      for (const Complex& z : d.states[i].data()) out << format_real(z.imag()) << ',';
    }
    out << format_real(d.concurrence[i]) << '\n';
  }
}

// ---------------------------------------------------------------------------
// Concurrence histogram: logarithmic bins over the whole range, and linear
// bins above the entanglement threshold.

struct HistogramBin {
  std::string scale;  // "log" or "linear"
  double lo, hi;
  std::size_t count;
};

inline std::vector<HistogramBin> concurrence_histogram(std::span<const double> c,
                                                       std::size_t n_log = 20,
                                                       std::size_t n_linear = 100,
                                                       double log_floor = 1e-12) {
  std::vector<HistogramBin> bins;
  // The first log bin also collects exact zeros.
  const double l0 = std::log10(log_floor);
  for (std::size_t b = 0; b < n_log; ++b) {
    const double lo = b == 0 ? 0.0 : std::pow(10.0, l0 + (0.0 - l0) * static_cast<double>(b) / static_cast<double>(n_log));
    const double hi = std::pow(10.0, l0 + (0.0 - l0) * static_cast<double>(b + 1) / static_cast<double>(n_log));
    bins.push_back({"log", lo, hi, 0});
  }
  const double tau = kEntanglementThreshold;
  for (std::size_t b = 0; b < n_linear; ++b) {
    // Linear bins of width 0.01 over [0, 1]; only samples with C >= tau count.
    bins.push_back({"linear", static_cast<double>(b) / static_cast<double>(n_linear),
                    static_cast<double>(b + 1) / static_cast<double>(n_linear), 0});
  }
  for (double v : c) {
    for (std::size_t b = 0; b < n_log; ++b) {
      const bool last = b + 1 == n_log;
      if (v >= bins[b].lo && (v < bins[b].hi || (last && v <= bins[b].hi))) {
        ++bins[b].count;
        break;
      }
    }
    if (v >= tau) {
      std::size_t b = std::min(n_linear - 1, static_cast<std::size_t>(v * static_cast<double>(n_linear)));
      ++bins[n_log + b].count;
    }
  }
  return bins;
}

inline void write_histogram_csv(std::ostream& out, const std::vector<HistogramBin>& bins) {
  out << "scale,lo,hi,count\n";
  for (const auto& b : bins) {
    out << b.scale << ',' << format_real(b.lo) << ',' << format_real(b.hi) << ',' << b.count << '\n';
  }
}

}  // namespace qent
