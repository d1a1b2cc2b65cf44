#include "qent/tomography.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "qent/sampler.hpp"
#include "test_util.hpp"

namespace qent {
namespace {

ComplexMatrix bell_phi_plus() {
  const double h = 1.0 / std::numbers::sqrt2;
  return ComplexMatrix::outer(std::vector<Complex>{h, 0.0, 0.0, h});
}

ComplexMatrix swap_gate() {
  ComplexMatrix s(4, 4);
  s(0, 0) = s(3, 3) = 1.0;
  s(1, 2) = s(2, 1) = 1.0;
  return s;
}

TEST(Projector, Values) {
  const ComplexMatrix p0 = projector(0);
  EXPECT_EQ(p0, (ComplexMatrix{{1.0, 0.0}, {0.0, 0.0}}));
  EXPECT_LT(max_abs_diff(projector(2), ComplexMatrix{{0.5, 0.5}, {0.5, 0.5}}), 1e-15);
  const ComplexMatrix expected3{{0.5, Complex(0.0, 0.5)}, {Complex(0.0, -0.5), 0.5}};
  EXPECT_LT(max_abs_diff(projector(3), expected3), 1e-15);
}

TEST(Projector, IdempotentHermitianRankOne) {
  for (int k = 0; k < 4; ++k) {
    const ComplexMatrix p = projector(k);
    EXPECT_LT(max_abs_diff(p * p, p), 1e-15);
    EXPECT_LT(hermiticity_defect(p), 1e-15);
    EXPECT_NEAR(p.trace().real(), 1.0, 1e-15);
  }
}

TEST(Projector, OutOfRange) {
  for (int k : {-1, 4}) {
    try {
      projector(k);
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::IndexOutOfRange);
    }
  }
}

TEST(Blocks, IndexSets) {
  const auto a = block_indices(BlockId::A);
  EXPECT_EQ(a, (std::array<std::size_t, 4>{0, 1, 4, 5}));
  EXPECT_EQ(block_indices(BlockId::B), (std::array<std::size_t, 4>{2, 3, 6, 7}));
  EXPECT_EQ(block_indices(BlockId::C), (std::array<std::size_t, 4>{8, 9, 12, 13}));
  EXPECT_EQ(block_indices(BlockId::D), (std::array<std::size_t, 4>{10, 11, 14, 15}));
  for (BlockId b : kAllBlocks) {
    for (std::size_t k : block_indices(b)) EXPECT_EQ(block_of(k), b);
  }
}

TEST(MeasureAll, ProductState) {
  ComplexMatrix raw(4, 4);
  raw(0, 0) = 1.0;
  const MeasurementVector m = measure_all(validate_density_matrix(raw));
  EXPECT_NEAR(m(0, 0), 1.0, 1e-15);
  EXPECT_NEAR(m(0, 1), 0.0, 1e-15);
  EXPECT_NEAR(m(1, 0), 0.0, 1e-15);
  EXPECT_NEAR(m(1, 1), 0.0, 1e-15);
  EXPECT_NEAR(m(0, 2), 0.5, 1e-15);
  EXPECT_NEAR(m(0, 3), 0.5, 1e-15);
  EXPECT_NEAR(m(2, 2), 0.25, 1e-15);
}

TEST(MeasureAll, BellState) {
  const MeasurementVector m = measure_all(validate_density_matrix(bell_phi_plus()));
  EXPECT_NEAR(m(0, 0), 0.5, 1e-15);
  EXPECT_NEAR(m(1, 1), 0.5, 1e-15);
  EXPECT_NEAR(m(0, 1), 0.0, 1e-15);
  EXPECT_NEAR(m(1, 0), 0.0, 1e-15);
  EXPECT_NEAR(m(2, 2), 0.5, 1e-15);
}

TEST(MeasureAll, MaximallyMixed) {
  const MeasurementVector m = measure_all(validate_density_matrix(ComplexMatrix::identity(4) * 0.25));
  for (double v : m.m) EXPECT_NEAR(v, 0.25, 1e-15);
}

TEST(MeasureAll, ClosedFormAgreesWithTraceForm) {
  Rng rng = derive_rng(41);
  double worst = 0.0;
  for (int rep = 0; rep < 1000; ++rep) {
    const DensityMatrix rho = testing::random_state(rng);
    const MeasurementVector a = measure_all(rho);
    const MeasurementVector b = measure_closed_form(rho);
    for (std::size_t k = 0; k < kNumMeasurements; ++k) worst = std::max(worst, std::abs(a[k] - b[k]));
  }
  EXPECT_LE(worst, 1e-10);
}

TEST(MeasureAll, ProbabilitiesAndOccupationSum) {
  Rng rng = derive_rng(43);
  for (int rep = 0; rep < 1000; ++rep) {
    const MeasurementVector m = measure_all(testing::random_state(rng));
    for (double v : m.m) {
      EXPECT_GE(v, -1e-12);
      EXPECT_LE(v, 1.0 + 1e-12);
    }
    EXPECT_NEAR(m(0, 0) + m(0, 1) + m(1, 0) + m(1, 1), 1.0, 1e-9);
  }
}

TEST(MeasureAll, Linear) {
  Rng rng = derive_rng(47);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int rep = 0; rep < 200; ++rep) {
    const DensityMatrix r1 = testing::random_state(rng);
    const DensityMatrix r2 = testing::random_state(rng);
    const double alpha = u(rng);
    const MeasurementVector mix = measure_matrix(r1.matrix() * alpha + r2.matrix() * (1.0 - alpha));
    const MeasurementVector m1 = measure_all(r1);
    const MeasurementVector m2 = measure_all(r2);
    for (std::size_t k = 0; k < kNumMeasurements; ++k) {
      EXPECT_NEAR(mix[k], alpha * m1[k] + (1.0 - alpha) * m2[k], 1e-10);
    }
  }
}

TEST(MeasureAll, QubitSwapTransposesOutcomes) {
  Rng rng = derive_rng(53);
  const ComplexMatrix s = swap_gate();
  for (int rep = 0; rep < 200; ++rep) {
    const DensityMatrix rho = testing::random_state(rng);
    const MeasurementVector m = measure_all(rho);
    const MeasurementVector swapped = measure_matrix(s * rho.matrix() * s);
    for (std::size_t i = 0; i < 4; ++i) {
      for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(swapped(i, j), m(j, i), 1e-12);
    }
  }
}

TEST(Reconstruct, RoundTrip) {
  Rng rng = derive_rng(59);
  double worst = 0.0;
  for (int rep = 0; rep < 1000; ++rep) {
    const DensityMatrix rho = testing::random_state(rng);
    worst = std::max(worst, max_abs_diff(reconstruct(measure_all(rho)), rho.matrix()));
  }
  EXPECT_LE(worst, 1e-9);
}

TEST(Reconstruct, MaximallyMixed) {
  const ComplexMatrix mixed = ComplexMatrix::identity(4) * 0.25;
  EXPECT_LT(max_abs_diff(reconstruct(measure_matrix(mixed)), mixed), 1e-12);
}

TEST(Reconstruct, WellConditioned) {
  const double kappa = TomographyInverter::instance().condition_number();
  EXPECT_GT(kappa, 1.0);
  EXPECT_LT(kappa, 1e3);
}

TEST(Reconstruct, OuterBlockNoiseOnlyMovesNonLocalCoherences) {
  Rng rng = derive_rng(61);
  const DensityMatrix rho = sample_haar_pure(rng);
  const MeasurementVector clean = measure_all(rho);
  const MeasurementVector noisy =
      perturb(clean, NoiseSpec::single(NoiseKind::Gaussian, 0.01, 3, 3), rng);
  const ComplexMatrix diff = reconstruct(noisy) - rho.matrix();
  for (std::size_t r = 0; r < 4; ++r) {
    for (std::size_t c = 0; c < 4; ++c) {
      const bool non_local = (r + c == 3);
      if (r == c || !non_local) {
        EXPECT_LT(std::abs(diff(r, c)), 1e-12) << r << "," << c;
      }
    }
  }
  EXPECT_GT(std::abs(diff(0, 3)), 0.0);
}

TEST(ProjectToPhysical, PhysicalInputUnchanged) {
  Rng rng = derive_rng(67);
  for (int rep = 0; rep < 100; ++rep) {
    const DensityMatrix rho = testing::random_state(rng);
    EXPECT_LT(max_abs_diff(project_to_physical(rho.matrix()).matrix(), rho.matrix()), 1e-9);
  }
}

TEST(ProjectToPhysical, ClipsNegativeEigenvalues) {
  const ComplexMatrix raw = ComplexMatrix::diagonal(std::vector<double>{1.1, 0.0, 0.0, -0.1});
  const ComplexMatrix expected = ComplexMatrix::diagonal(std::vector<double>{1.0, 0.0, 0.0, 0.0});
  EXPECT_LT(max_abs_diff(project_to_physical(raw).matrix(), expected), 1e-12);
}

TEST(ProjectToPhysical, UnitTraceOnNoisyInput) {
  Rng rng = derive_rng(71);
  for (int rep = 0; rep < 500; ++rep) {
    const MeasurementVector m =
        perturb(measure_all(testing::random_state(rng)), NoiseSpec::all(NoiseKind::UniformSymmetric, 0.1), rng);
    const DensityMatrix rho = project_to_physical(reconstruct(m));
    EXPECT_NEAR(rho.matrix().trace().real(), 1.0, 1e-12);
  }
}

TEST(ProjectToPhysical, ZeroTrace) {
  try {
    project_to_physical(ComplexMatrix::identity(4) * -1.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::ZeroTrace);
  }
}

TEST(Perturb, ZeroSigmaIsIdentity) {
  Rng rng = derive_rng(73);
  const MeasurementVector m = measure_all(sample_haar_pure(rng));
  EXPECT_EQ(perturb(m, NoiseSpec::all(NoiseKind::Gaussian, 0.0), rng), m);
  EXPECT_EQ(perturb(m, NoiseSpec::all(NoiseKind::UniformSymmetric, 0.0), rng), m);
}

TEST(Perturb, SingleTargetIsBounded) {
  Rng rng = derive_rng(79);
  const MeasurementVector m = measure_all(sample_haar_pure(rng));
  for (int rep = 0; rep < 1000; ++rep) {
    const MeasurementVector p = perturb(m, NoiseSpec::single(NoiseKind::UniformSymmetric, 0.05, 0, 0), rng);
    EXPECT_LE(std::abs(p[0] - m[0]), 0.05);
    for (std::size_t k = 1; k < kNumMeasurements; ++k) EXPECT_EQ(p[k], m[k]);
  }
}

TEST(Perturb, GaussianSpread) {
  Rng rng = derive_rng(83);
  const MeasurementVector m{};
  std::array<double, 16> sum{}, sum_sq{};
  constexpr int kDraws = 10000;
  for (int rep = 0; rep < kDraws; ++rep) {
    const MeasurementVector p = perturb(m, NoiseSpec::all(NoiseKind::Gaussian, 0.01), rng);
    for (std::size_t k = 0; k < 16; ++k) {
      sum[k] += p[k];
      sum_sq[k] += p[k] * p[k];
    }
  }
  for (std::size_t k = 0; k < 16; ++k) {
    const double mean = sum[k] / kDraws;
    const double sd = std::sqrt(sum_sq[k] / kDraws - mean * mean);
    EXPECT_GE(sd, 0.009);
    EXPECT_LE(sd, 0.011);
  }
}

TEST(Perturb, NoClamping) {
  Rng rng = derive_rng(89);
  const MeasurementVector m{};
  bool saw_negative = false;
  for (int rep = 0; rep < 100 && !saw_negative; ++rep) {
    saw_negative = perturb(m, NoiseSpec::single(NoiseKind::Gaussian, 0.1, 1, 2), rng)(1, 2) < 0.0;
  }
  EXPECT_TRUE(saw_negative);
}

TEST(Perturb, RejectsInvalidSpec) {
  Rng rng = derive_rng(97);
  EXPECT_THROW(perturb(MeasurementVector{}, NoiseSpec::all(NoiseKind::Gaussian, -1.0), rng), Error);
  EXPECT_THROW(perturb(MeasurementVector{}, NoiseSpec{NoiseKind::Gaussian, 0.1, 16}, rng), Error);
}

class ErrorMapTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    Rng rng = derive_rng(101);
    for (int k = 0; k < 30; ++k) states_.push_back(testing::random_state(rng));
    maps_ = error_propagation_map(states_, 0.01, 20, 7);
  }
  static inline std::vector<DensityMatrix> states_;
  static inline ErrorMaps maps_{};
};

TEST_F(ErrorMapTest, OuterBlockOnlyHitsAntiDiagonal) {
  for (std::size_t k : block_indices(BlockId::D)) {
    for (std::size_t r = 0; r < 4; ++r) {
      for (std::size_t c = 0; c < 4; ++c) {
        const double e = maps_[k][4 * r + c];
        if (r + c == 3 && r != c) {
          EXPECT_GT(e, 1e-4) << "m_" << k << " at " << r << c;
        } else {
          EXPECT_LT(e, 1e-12) << "m_" << k << " at " << r << c;
        }
      }
    }
  }
}

TEST_F(ErrorMapTest, OccupationOutcomeHitsDiagonalAndCoherences) {
  const auto& map = maps_[measurement_index(0, 0)];
  EXPECT_GT(map[0], 1e-4);
  double off = 0.0;
  for (std::size_t r = 0; r < 4; ++r) {
    for (std::size_t c = 0; c < 4; ++c) {
      if (r != c) off = std::max(off, map[4 * r + c]);
    }
  }
  EXPECT_GT(off, 1e-4);
}

TEST_F(ErrorMapTest, OccupationBlockCoversEveryEntry) {
  for (std::size_t e = 0; e < 16; ++e) {
    double hit = 0.0;
    for (std::size_t k : block_indices(BlockId::A)) hit = std::max(hit, maps_[k][e]);
    EXPECT_GT(hit, 1e-4) << "entry " << e;
  }
}

TEST_F(ErrorMapTest, ScalesWithSigma) {
  const ErrorMaps small = error_propagation_map(states_, 1e-9, 5, 7);
  for (const auto& map : small) {
    for (double e : map) EXPECT_LT(e, 1e-8);
  }
}

TEST_F(ErrorMapTest, IndependentOfThreadCount) {
  EXPECT_EQ(error_propagation_map(states_, 0.01, 20, 7, NoiseKind::Gaussian, 3), maps_);
}

TEST(ErrorMap, RejectsBadArguments) {
  std::vector<DensityMatrix> none;
  EXPECT_THROW(error_propagation_map(none, 0.01, 1, 0), Error);
  Rng rng = derive_rng(1);
  std::vector<DensityMatrix> one{sample_haar_pure(rng)};
  EXPECT_THROW(error_propagation_map(one, 0.0, 1, 0), Error);
}

}  // namespace
}  // namespace qent
