#include "qent/sampler.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <numbers>

#include "qent/tomography.hpp"

namespace qent {
namespace {

TEST(HaarPure, IsPureAndDeterministic) {
  Rng a = derive_rng(7, {1});
  Rng b = derive_rng(7, {1});
  for (int rep = 0; rep < 100; ++rep) {
    const DensityMatrix x = sample_haar_pure(a);
    EXPECT_NEAR(x.purity(), 1.0, 1e-9);
    EXPECT_EQ(x.matrix(), sample_haar_pure(b).matrix());
  }
}

TEST(HaarPure, MeanConcurrence) {
  // The Haar average of the pure-state concurrence on C^2 (x) C^2 is 3 pi / 16.
  Rng rng = derive_rng(2024);
  constexpr int kDraws = 100000;
  double sum = 0.0;
  for (int k = 0; k < kDraws; ++k) sum += concurrence(sample_haar_pure(rng));
  EXPECT_NEAR(sum / kDraws, 3.0 * std::numbers::pi / 16.0, 0.004);
}

TEST(Ginibre, RankAndPurity) {
  Rng rng = derive_rng(3);
  for (int rep = 0; rep < 100; ++rep) {
    EXPECT_NEAR(sample_ginibre_mixed(1, rng).purity(), 1.0, 1e-9);
    const Spectrum s = hermitian_eigen(sample_ginibre_mixed(4, rng).matrix());
    EXPECT_GT(s.eigenvalues[3], 0.0);
    const Spectrum s2 = hermitian_eigen(sample_ginibre_mixed(2, rng).matrix());
    EXPECT_LT(std::abs(s2.eigenvalues[2]), 1e-12);
  }
}

TEST(Ginibre, RejectsBadRank) {
  Rng rng = derive_rng(3);
  EXPECT_THROW(sample_ginibre_mixed(0, rng), Error);
  EXPECT_THROW(sample_ginibre_mixed(5, rng), Error);
}

TEST(Ginibre, FullRankSeparableFraction) {
  // Reference fraction for full-rank draws (Hilbert-Schmidt measure) from a
  // Monte-Carlo run of 2e5 states: 0.242, consistent with the known 8/33.
  Rng rng = derive_rng(99);
  constexpr int kDraws = 100000;
  int separable = 0;
  for (int k = 0; k < kDraws; ++k) {
    if (concurrence(sample_ginibre_mixed(4, rng)) < kEntanglementThreshold) ++separable;
  }
  EXPECT_NEAR(static_cast<double>(separable) / kDraws, 8.0 / 33.0, 0.01);
}

TEST(Circuit, DepthZeroIsGroundState) {
  Rng rng = derive_rng(5);
  for (int rep = 0; rep < 20; ++rep) {
    const DensityMatrix rho = sample_circuit_state(0, rng);
    EXPECT_NEAR(rho(0, 0).real(), 1.0, 1e-12);
    EXPECT_EQ(concurrence(rho), 0.0);
  }
}

TEST(Circuit, PureAndMixedBranches) {
  Rng rng = derive_rng(6);
  int pure = 0, mixed = 0;
  for (int rep = 0; rep < 400; ++rep) {
    const double p = sample_circuit_state(2, rng).purity();
    EXPECT_LE(p, 1.0 + 1e-9);
    if (std::abs(p - 1.0) <= 1e-9) {
      ++pure;
    } else {
      EXPECT_LT(p, 1.0);
      ++mixed;
    }
  }
  EXPECT_GT(pure, 150);
  EXPECT_GT(mixed, 150);
}

TEST(Circuit, RejectsNegativeDepth) {
  Rng rng = derive_rng(5);
  EXPECT_THROW(sample_circuit_state(-1, rng), Error);
}

TEST(BellRandomized, MaximallyEntangled) {
  Rng rng = derive_rng(8);
  bool occupations_moved = false;
  for (int rep = 0; rep < 200; ++rep) {
    const DensityMatrix rho = sample_bell_randomized(rng);
    EXPECT_NEAR(concurrence(rho), 1.0, 1e-8);
    const MeasurementVector m = measure_all(rho);
    if (std::abs(m(0, 0) + m(1, 1) - 1.0) > 1e-3) occupations_moved = true;
  }
  EXPECT_TRUE(occupations_moved);
}

TEST(BellRandomized, Deterministic) {
  Rng a = derive_rng(9);
  Rng b = derive_rng(9);
  EXPECT_EQ(sample_bell_randomized(a).matrix(), sample_bell_randomized(b).matrix());
}

TEST(DatasetSpec, Validation) {
  DatasetSpec s = DatasetSpec::with_defaults(100, 1);
  EXPECT_NO_THROW(validate(s));
  s.source_mix.haar = 0.5;
  EXPECT_THROW(validate(s), Error);
  s = DatasetSpec::with_defaults(100, 1);
  s.n_bell = 101;
  EXPECT_THROW(validate(s), Error);
  s = DatasetSpec::with_defaults(100, 1);
  s.source_mix.circuit = -0.05;
  s.source_mix.ginibre = 0.65;
  EXPECT_THROW(validate(s), Error);
}

class SmallDataset : public ::testing::Test {
 protected:
  static DatasetSpec spec() {
    DatasetSpec s = DatasetSpec::with_defaults(1000, 7);
    s.n_bell = 40;
    return s;
  }
  static void SetUpTestSuite() { data_ = generate_dataset(spec()); }
  static inline std::vector<LabeledState> data_;
};

TEST_F(SmallDataset, SizeBalanceAndBellCount) {
  ASSERT_EQ(data_.size(), 1000u);
  std::size_t entangled = 0, bell = 0;
  for (const auto& s : data_) {
    entangled += s.entangled;
    bell += s.source.kind == SourceKind::BellRandomized;
  }
  const double fraction = static_cast<double>(entangled) / 1000.0;
  EXPECT_GE(fraction, 0.51);
  EXPECT_LE(fraction, 0.55);
  EXPECT_EQ(bell, 40u);
}

TEST_F(SmallDataset, TopBinSpike) {
  std::size_t top = 0;
  for (const auto& s : data_) top += s.concurrence >= 0.99;
  EXPECT_GE(top, 40u);
}

TEST_F(SmallDataset, LabelsAreConsistent) {
  for (const auto& s : data_) {
    EXPECT_NO_THROW(validate_density_matrix(s.rho.matrix(), 1e-9));
    EXPECT_NEAR(concurrence(s.rho), s.concurrence, 1e-9);
    EXPECT_EQ(s.entangled, s.concurrence >= kEntanglementThreshold);
    EXPECT_GE(s.concurrence, 0.0);
    EXPECT_LE(s.concurrence, 1.0);
  }
}

TEST_F(SmallDataset, Deterministic) {
  const auto again = generate_dataset(spec());
  ASSERT_EQ(again.size(), data_.size());
  for (std::size_t k = 0; k < data_.size(); ++k) {
    EXPECT_EQ(again[k].rho.matrix(), data_[k].rho.matrix());
    EXPECT_EQ(again[k].concurrence, data_[k].concurrence);
  }
}

TEST_F(SmallDataset, IndependentOfThreadCount) {
  DatasetSpec s = spec();
  s.threads = 3;
  const auto threaded = generate_dataset(s);
  for (std::size_t k = 0; k < data_.size(); ++k) {
    ASSERT_EQ(threaded[k].rho.matrix(), data_[k].rho.matrix());
  }
}

TEST_F(SmallDataset, SeedChangesFirstState) {
  DatasetSpec s = spec();
  s.seed = 8;
  EXPECT_NE(generate_dataset(s).front().rho.matrix(), data_.front().rho.matrix());
}

TEST(GenerateDataset, InfeasibleTarget) {
  DatasetSpec s = DatasetSpec::with_defaults(200, 1);
  s.source_mix = SourceMix{1.0, 0.0, 0.0, 0.0};
  s.n_bell = 0;
  try {
    generate_dataset(s);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::SpecInfeasible);
  }
}

}  // namespace
}  // namespace qent
