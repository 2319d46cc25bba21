#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <set>

#include "ccl/rehearsal.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using ccl::AugmentSpec;
using ccl::Matrix;

namespace {

double mean_sq_dev(const Matrix& x) {
  double total = 0.0;
  for (std::size_t d = 0; d < x.cols(); ++d) {
    double m = 0.0;
    for (std::size_t i = 0; i < x.rows(); ++i) m += x(i, d);
    m /= static_cast<double>(x.rows());
    for (std::size_t i = 0; i < x.rows(); ++i) total += (x(i, d) - m) * (x(i, d) - m);
  }
  return total;
}

ccl::EncoderParams identity_encoder(std::size_t dim) {
  ccl::EncoderParams p = ccl::init_params({dim, {dim}}, 0);
  p.for_each_value([](double& v) { v = 0.0; });
  for (std::size_t i = 0; i < dim; ++i) p.layers[0].weight(i, i) = 1.0;
  return p;
}

}  // namespace

TEST(KMeans, SingleClusterIsMean) {
  std::mt19937_64 rng(1);
  const Matrix x = ccl::test::random_matrix(9, 3, rng);
  const auto r = ccl::kmeans(x, 1, 4);
  for (std::size_t d = 0; d < 3; ++d) {
    double m = 0.0;
    for (std::size_t i = 0; i < 9; ++i) m += x(i, d);
    EXPECT_NEAR(r.centroids(0, d), m / 9.0, 1e-12);
  }
  EXPECT_NEAR(r.inertia, mean_sq_dev(x), 1e-12);
}

TEST(KMeans, TwoSeparatedPairsMatchExhaustiveBest) {
  const Matrix x{{0, 0}, {0, 1}, {10, 10}, {10.5, 10}};
  // Enumerate all 2-colourings; the best inertia is the reference.
  double best = 1e300;
  for (int mask = 1; mask < 15; ++mask) {
    double total = 0.0;
    for (int side = 0; side < 2; ++side) {
      Matrix part;
      for (std::size_t i = 0; i < 4; ++i)
        if (((mask >> i) & 1) == side) part.append_row(x.row(i));
      total += mean_sq_dev(part);
    }
    best = std::min(best, total);
  }
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto r = ccl::kmeans(x, 2, seed);
    EXPECT_NEAR(r.inertia, best, 1e-12);
    EXPECT_NEAR(r.inertia, 0.5 + 0.125, 1e-12);
    EXPECT_EQ(r.assignments[0], r.assignments[1]);
    EXPECT_EQ(r.assignments[2], r.assignments[3]);
    EXPECT_NE(r.assignments[0], r.assignments[2]);
  }
}

TEST(KMeans, SingletonClustersHaveZeroInertia) {
  std::mt19937_64 rng(2);
  const Matrix x = ccl::test::random_matrix(7, 4, rng);
  EXPECT_NEAR(ccl::kmeans(x, 7, 3).inertia, 0.0, 1e-20);
}

TEST(KMeans, InertiaNonIncreasingAndAssignmentsNearest) {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<std::size_t> kd(1, 6);
  for (int t = 0; t < 50; ++t) {
    const Matrix x = ccl::test::random_matrix(30, 4, rng);
    const auto r = ccl::kmeans(x, kd(rng), static_cast<std::uint64_t>(t));
    for (std::size_t i = 1; i < r.inertia_history.size(); ++i)
      EXPECT_LE(r.inertia_history[i], r.inertia_history[i - 1] + 1e-12);
    double inertia = 0.0;
    for (std::size_t i = 0; i < 30; ++i) {
      double best = 1e300;
      for (std::size_t c = 0; c < r.centroids.rows(); ++c)
        best = std::min(best, ccl::detail::squared_distance(x.row(i), r.centroids.row(c)));
      const double own = ccl::detail::squared_distance(x.row(i), r.centroids.row(static_cast<std::size_t>(r.assignments[i])));
      EXPECT_EQ(own, best);
      inertia += own;
    }
    EXPECT_NEAR(inertia, r.inertia, 1e-9);
  }
}

TEST(KMeans, Errors) {
  try {
    ccl::kmeans(Matrix{{1, 2}}, 2, 0);
    FAIL();
  } catch (const ccl::Error& e) {
    EXPECT_STREQ(e.what(), "k exceeds population");
  }
  try {
    ccl::kmeans(Matrix{{1, NAN}, {0, 0}}, 1, 0);
    FAIL();
  } catch (const ccl::Error& e) {
    EXPECT_STREQ(e.what(), "invalid features");
  }
}

TEST(ViewVariance, IdentityAugmentationAndDeterminism) {
  const auto p = ccl::test::live_params({4, {8, 3}}, 1);
  const std::vector<double> x{0.3, -1.0, 0.5, 2.0};
  EXPECT_EQ(ccl::view_variance(p, x, AugmentSpec{0, 0, 0}, 6, 11), 0.0);
  EXPECT_EQ(ccl::view_variance(p, x, AugmentSpec{}, 6, 11), ccl::view_variance(p, x, AugmentSpec{}, 6, 11));
  EXPECT_THROW(ccl::view_variance(p, x, AugmentSpec{}, 1, 11), ccl::Error);
}

TEST(ViewVariance, NoiseInsensitiveSampleScoresLower) {
  // Under an identity encoder the embedding is x / |x|: a long vector barely
  // turns under noise, a short one near the origin turns freely.
  const auto p = identity_encoder(2);
  const AugmentSpec noise{0.1, 0.0, 0.0};
  const std::vector<double> stable{10.0, 0.0}, fragile{0.05, 0.05};
  auto direct = [&](const std::vector<double>& x) {
    Matrix views(1000, 2);
    ccl::Rng rng(99);
    for (std::size_t v = 0; v < 1000; ++v) {
      const auto y = ccl::augment(x, noise, rng);
      views(v, 0) = y[0];
      views(v, 1) = y[1];
    }
    return mean_sq_dev(ccl::l2_normalize_rows(views)) / 1000.0;
  };
  EXPECT_LT(direct(stable), direct(fragile));
  EXPECT_LT(ccl::view_variance(p, stable, noise, 6, 5), ccl::view_variance(p, fragile, noise, 6, 5));
}

TEST(ViewVariance, ClonesScoreIdenticallyUnderSameSeed) {
  const auto p = ccl::test::live_params({3, {5, 2}}, 2);
  const std::vector<double> x{1, 2, 3};
  const std::vector<double> clone = x;
  EXPECT_EQ(ccl::view_variance(p, x, {}, 6, ccl::sample_view_seed(7, 4)),
            ccl::view_variance(p, clone, {}, 6, ccl::sample_view_seed(7, 4)));
}

TEST(SelectExemplars, BudgetCoveringClustersSelectsAll) {
  std::mt19937_64 rng(4);
  const Matrix x = ccl::test::random_matrix(12, 5, rng);
  const auto p = ccl::test::live_params({5, {8, 4}}, 3);
  ccl::SamplerOptions opt;
  opt.k = 3;
  opt.n_per_cluster = 12;
  const auto sel = ccl::select_exemplars(x, p, opt, 1);
  ASSERT_EQ(sel.size(), 12u);
  for (std::size_t i = 0; i < 12; ++i) EXPECT_EQ(sel[i].index, i);
}

TEST(SelectExemplars, SingleClusterKeepsLowestScores) {
  std::mt19937_64 rng(5);
  const Matrix x = ccl::test::random_matrix(3, 4, rng);
  const auto p = ccl::test::live_params({4, {6, 3}}, 4);
  ccl::SamplerOptions opt;
  opt.k = 1;
  opt.n_per_cluster = 2;
  std::vector<double> s(3);
  for (std::size_t i = 0; i < 3; ++i) s[i] = ccl::view_variance(p, x.row(i), opt.augment, 6, ccl::sample_view_seed(9, i));
  const std::size_t worst = static_cast<std::size_t>(std::max_element(s.begin(), s.end()) - s.begin());
  const auto sel = ccl::select_exemplars(x, p, opt, 9);
  ASSERT_EQ(sel.size(), 2u);
  for (const auto& e : sel) {
    EXPECT_NE(e.index, worst);
    EXPECT_EQ(e.score, s[e.index]);
  }
}

TEST(SelectExemplars, MatchesBruteForceAndSizeProperty) {
  std::mt19937_64 rng(6);
  std::uniform_int_distribution<std::size_t> kd(1, 5), nd(1, 8);
  for (int t = 0; t < 20; ++t) {
    const Matrix x = ccl::test::random_matrix(30, 6, rng);
    const auto p = ccl::test::live_params({6, {10, 4}}, static_cast<std::uint64_t>(t));
    ccl::SamplerOptions opt;
    opt.k = kd(rng);
    opt.n_per_cluster = nd(rng);
    const auto got = ccl::select_exemplars(x, p, opt, static_cast<std::uint64_t>(100 + t));
    const auto want = ccl::oracle::brute_force_select(x, p, opt, static_cast<std::uint64_t>(100 + t));
    ASSERT_EQ(got.size(), want.size());
    for (std::size_t i = 0; i < got.size(); ++i) {
      EXPECT_EQ(got[i].index, want[i].index);
      EXPECT_EQ(got[i].cluster, want[i].cluster);
      EXPECT_NEAR(got[i].score, want[i].score, 1e-12);
    }
    const auto cl = ccl::kmeans(ccl::embed(p, x), opt.k, ccl::derive_seed(100 + t, "rehearsal.kmeans"));
    std::size_t expected = 0;
    for (std::size_t c = 0; c < opt.k; ++c)
      expected += std::min<std::size_t>(opt.n_per_cluster, std::count(cl.assignments.begin(), cl.assignments.end(), c));
    EXPECT_EQ(got.size(), expected);
    std::set<std::size_t> uniq;
    for (const auto& e : got) uniq.insert(e.index);
    EXPECT_EQ(uniq.size(), got.size());
    const auto again = ccl::select_exemplars(x, p, opt, static_cast<std::uint64_t>(100 + t));
    for (std::size_t i = 0; i < got.size(); ++i) EXPECT_EQ(again[i].index, got[i].index);
  }
}

TEST(SelectRandom, WholePopulationDeterminismAndError) {
  const auto all = ccl::select_random(5, 5, 3);
  EXPECT_EQ(all, (std::vector<std::size_t>{0, 1, 2, 3, 4}));
  EXPECT_EQ(ccl::select_random(100, 10, 3), ccl::select_random(100, 10, 3));
  try {
    ccl::select_random(3, 4, 0);
    FAIL();
  } catch (const ccl::Error& e) {
    EXPECT_STREQ(e.what(), "budget exceeds population");
  }
}

TEST(SelectRandom, UniformMonteCarlo) {
  std::vector<int> hits(4, 0);
  for (std::uint64_t s = 0; s < 10000; ++s) ++hits[ccl::select_random(4, 1, s)[0]];
  for (int h : hits) EXPECT_NEAR(h / 10000.0, 0.25, 0.02);
}

TEST(ExemplarStore, AppendOnlyCounts) {
  ccl::ExemplarStore store;
  store.add(0, {{{1.0, 2.0}, 0, 0, 0.1, 3}, {{3.0, 4.0}, 0, 1, 0.2, 5}});
  const auto first = store.entries()[0].sample;
  store.add(1, {{{5.0, 6.0}, 0, -1, 0.0, 0}});
  EXPECT_EQ(store.size(), 3u);
  EXPECT_EQ(store.count_for_task(0), 2u);
  EXPECT_EQ(store.count_for_task(1), 1u);
  EXPECT_EQ(store.entries()[0].sample, first);
  EXPECT_EQ(store.samples(), (Matrix{{1, 2}, {3, 4}, {5, 6}}));
}
