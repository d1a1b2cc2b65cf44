#include <gtest/gtest.h>

#include <sstream>

#include "qent/dataset.hpp"
#include "test_util.hpp"

using namespace qent;

namespace {

Dataset small_dataset() {
  Rng rng = derive_rng(31);
  std::vector<LabeledState> states;
  for (int i = 0; i < 40; ++i) {
    states.push_back(label_state(qent::testing::random_state(rng), {SourceKind::HaarPure, 0}));
  }
  return to_dataset(states);
}

}  // namespace

TEST(Dataset, FeaturesAndLabels) {
  const Dataset d = small_dataset();
  const FeatureMatrix x = d.features();
  ASSERT_EQ(x.rows, d.size());
  ASSERT_EQ(x.cols, 16u);
  for (std::size_t i = 0; i < d.size(); ++i) {
    double sum_a = 0.0;
    for (std::size_t j : block_indices(BlockId::A)) sum_a += x(i, j);
    EXPECT_NEAR(sum_a, 1.0, 1e-12);
  }
  const auto y = d.labels();
  for (std::size_t i = 0; i < d.size(); ++i) EXPECT_EQ(y[i], d.concurrence[i] >= 1e-6);
}

TEST(Dataset, FilterAndTake) {
  const Dataset d = small_dataset();
  const Dataset ent = d.filter([](double c) { return c > 0.1; });
  for (double c : ent.concurrence) EXPECT_GT(c, 0.1);
  const std::size_t rows[] = {3, 1};
  const Dataset t = d.take(rows);
  ASSERT_EQ(t.size(), 2u);
  EXPECT_EQ(t.states[0], d.states[3]);
  EXPECT_EQ(t.concurrence[1], d.concurrence[1]);
}

TEST(Dataset, StateParametersRoundTrip) {
  const Dataset d = small_dataset();
  const FeatureMatrix theta = state_parameters(d);
  for (std::size_t i = 0; i < d.size(); ++i) {
    StateParameters p;
    std::copy(theta.row(i).begin(), theta.row(i).end(), p.begin());
    const ComplexMatrix back = unpack_parameters(p);
    for (std::size_t k = 0; k < 16; ++k) EXPECT_NEAR(std::abs(back.data()[k] - d.states[i].data()[k]), 0.0, 1e-15);
  }
}

TEST(DatasetIo, BinaryRoundTripBothFormats) {
  const Dataset d = small_dataset();
  for (RecordFormat f : {RecordFormat::Measurements, RecordFormat::DensityMatrix}) {
    std::stringstream s;
    write_dataset(s, d, f);
    const auto [back, format] = read_dataset(s);
    EXPECT_EQ(format, f);
    ASSERT_EQ(back.size(), d.size());
    EXPECT_EQ(back.concurrence, d.concurrence);
    for (std::size_t i = 0; i < d.size(); ++i) {
      if (f == RecordFormat::Measurements) {
        EXPECT_EQ(back.measurements[i].m, d.measurements[i].m);
      } else {
        EXPECT_EQ(back.states[i], d.states[i]);
        EXPECT_EQ(back.measurements[i].m, d.measurements[i].m);
      }
    }
  }
}

TEST(DatasetIo, RejectsCorruptInput) {
  std::stringstream bad("QDSX");
  EXPECT_THROW(read_dataset(bad), Error);
  const Dataset d = small_dataset();
  std::stringstream s;
  write_dataset(s, d, RecordFormat::Measurements);
  std::stringstream cut(s.str().substr(0, 60));
  EXPECT_THROW(read_dataset(cut), Error);
  Dataset no_states = d;
  no_states.states.clear();
  std::stringstream t;
  EXPECT_THROW(write_dataset(t, no_states, RecordFormat::DensityMatrix), Error);
}

TEST(DatasetIo, CsvHeaderAndPrecision) {
  const Dataset d = small_dataset();
  std::stringstream s;
  write_dataset_csv(s, d, RecordFormat::Measurements);
  std::string header, first;
  std::getline(s, header);
  std::getline(s, first);
  EXPECT_EQ(header.substr(0, 10), "m_00,m_01,");
  EXPECT_EQ(header.substr(header.size() - 11), "concurrence");
  const double v = std::stod(first.substr(0, first.find(',')));
  EXPECT_EQ(v, d.measurements[0].m[0]);

  std::stringstream dm;
  write_dataset_csv(dm, d, RecordFormat::DensityMatrix);
  std::getline(dm, header);
  EXPECT_EQ(header.substr(0, 9), "re_00_00,");
  EXPECT_NE(header.find("im_11_11,concurrence"), std::string::npos);
}

TEST(Histogram, BinCountsAndRanges) {
  const std::vector<double> c{0.0, 0.0, 1e-13, 5e-7, 2e-6, 0.005, 0.5, 1.0};
  const auto bins = concurrence_histogram(c);
  ASSERT_EQ(bins.size(), 120u);
  std::size_t log_total = 0, lin_total = 0;
  for (const auto& b : bins) (b.scale == "log" ? log_total : lin_total) += b.count;
  EXPECT_EQ(log_total, c.size());
  EXPECT_EQ(lin_total, 4u);  // only C >= 1e-6
  EXPECT_EQ(bins[0].count, 3u);
  EXPECT_EQ(bins[20].count, 2u);   // [0, 0.01)
  EXPECT_EQ(bins[119].count, 1u);  // C = 1 lands in the top bin
  std::stringstream s;
  write_histogram_csv(s, bins);
  std::size_t lines = 0;
  for (std::string line; std::getline(s, line);) ++lines;
  EXPECT_EQ(lines, bins.size() + 1);
}
