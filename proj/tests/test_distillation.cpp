#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "ccl/distillation.hpp"
#include "test_util.hpp"

using ccl::Matrix;
using ccl::test::batch_of;
using ccl::test::random_unit_rows;

namespace {

struct Quad {
  Matrix zT, zTq, zS, zSq;
};

Quad random_quad(std::size_t b, std::size_t d, std::mt19937_64& rng) {
  return {random_unit_rows(b, d, rng), random_unit_rows(b, d, rng), random_unit_rows(b, d, rng),
          random_unit_rows(b, d, rng)};
}

double kd(const Quad& x, double tau) {
  return ccl::kd_loss(batch_of(x.zT), batch_of(x.zTq), batch_of(x.zS), batch_of(x.zSq), tau).loss;
}

double teacher_entropy(const Quad& x, double tau) {
  const Matrix pt = ccl::softmax_rows(ccl::similarity_matrix(x.zT, x.zTq), tau);
  return ccl::row_cross_entropy(pt, pt);
}

Matrix rotate(const Matrix& m, const Matrix& rot) { return ccl::matmul(m, ccl::transpose(rot)); }

// Random orthogonal matrix from Gram-Schmidt on a Gaussian matrix.
Matrix random_rotation(std::size_t d, std::mt19937_64& rng) {
  Matrix m = ccl::test::random_matrix(d, d, rng);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      const double p = ccl::dot(m.row(i), m.row(j));
      for (std::size_t k = 0; k < d; ++k) m(i, k) -= p * m(j, k);
    }
    const double n = ccl::norm(m.row(i));
    for (double& v : m.row(i)) v /= n;
  }
  return m;
}

}  // namespace

TEST(KdLoss, MatchedStudentGivesTeacherEntropy) {
  std::mt19937_64 rng(1);
  const Quad x = random_quad(5, 4, rng);
  Quad m = x;
  m.zS = x.zT;
  m.zSq = x.zTq;
  EXPECT_NEAR(kd(m, 0.1), teacher_entropy(x, 0.1), 1e-12);
}

TEST(KdLoss, SingletonBatch) {
  std::mt19937_64 rng(2);
  const Quad x = random_quad(1, 4, rng);
  const auto r = ccl::kd_loss(batch_of(x.zT), batch_of(x.zTq), batch_of(x.zS), batch_of(x.zSq), 0.1);
  EXPECT_EQ(r.loss, 0.0);
  for (double v : r.grad_zS.data()) EXPECT_EQ(v, 0.0);
}

TEST(KdLoss, BatchMismatch) {
  std::mt19937_64 rng(3);
  const Quad x = random_quad(3, 4, rng);
  try {
    ccl::kd_loss(batch_of(x.zT), batch_of(random_unit_rows(2, 4, rng)), batch_of(x.zS), batch_of(x.zSq), 0.1);
    FAIL();
  } catch (const ccl::Error& e) {
    EXPECT_STREQ(e.what(), "batch mismatch");
  }
  EXPECT_THROW(ccl::kd_loss(batch_of(x.zT), batch_of(x.zTq), batch_of(x.zS), batch_of(random_unit_rows(3, 5, rng)), 0.1),
               ccl::Error);
}

TEST(KdLoss, BoundedBelowByTeacherEntropy) {
  std::mt19937_64 rng(4);
  for (int t = 0; t < 100; ++t) {
    const Quad x = random_quad(4, 6, rng);
    EXPECT_GE(kd(x, 0.2) + 1e-9, teacher_entropy(x, 0.2));
  }
}

TEST(KdLoss, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<std::size_t> bd(1, 4), dd(2, 8);
  for (int t = 0; t < 60; ++t) {
    const Quad x = random_quad(bd(rng), dd(rng), rng);
    const auto r = ccl::kd_loss(batch_of(x.zT), batch_of(x.zTq), batch_of(x.zS), batch_of(x.zSq), 0.5);
    const Matrix g_s = ccl::finite_diff_grad(
        [&](const Matrix& m) {
          Quad y = x;
          y.zS = m;
          return kd(y, 0.5);
        },
        x.zS, 1e-5);
    const Matrix g_sq = ccl::finite_diff_grad(
        [&](const Matrix& m) {
          Quad y = x;
          y.zSq = m;
          return kd(y, 0.5);
        },
        x.zSq, 1e-5);
    EXPECT_LE(ccl::relative_error(r.grad_zS, g_s), 1e-4) << "trial " << t;
    EXPECT_LE(ccl::relative_error(r.grad_zSq, g_sq), 1e-4) << "trial " << t;
  }
}

TEST(KdLoss, JointRowPermutationAndRotationInvariance) {
  std::mt19937_64 rng(6);
  const Quad x = random_quad(4, 5, rng);
  const double base = kd(x, 0.1);

  const std::vector<std::size_t> perm{3, 1, 0, 2};
  const Quad p{ccl::gather_rows(x.zT, perm), ccl::gather_rows(x.zTq, perm), ccl::gather_rows(x.zS, perm),
               ccl::gather_rows(x.zSq, perm)};
  EXPECT_NEAR(kd(p, 0.1), base, 1e-12);

  const Matrix rot = random_rotation(5, rng);
  const Quad r{rotate(x.zT, rot), rotate(x.zTq, rot), rotate(x.zS, rot), rotate(x.zSq, rot)};
  EXPECT_NEAR(kd(r, 0.1), base, 1e-9);
}

TEST(Teacher, InitIsIndependentCopy) {
  ccl::EncoderParams student = ccl::init_params({4, {6, 3}}, 1);
  const ccl::EncoderParams teacher = ccl::teacher_init(student);
  std::mt19937_64 rng(7);
  const Matrix x = ccl::test::random_matrix(3, 4, rng);
  EXPECT_EQ(ccl::embed(teacher, x), ccl::embed(student, x));
  student.layers[0].bias[0] += 1.0;
  EXPECT_NE(teacher, student);
  EXPECT_EQ(teacher.layers[0].bias[0], 0.0);
}

TEST(Teacher, EpochUpdateMovesFractionOfGap) {
  const ccl::EncoderParams student = ccl::init_params({4, {6, 3}}, 1);
  ccl::EncoderParams teacher = ccl::init_params({4, {6, 3}}, 2);
  const auto t0 = ccl::flatten(teacher), s = ccl::flatten(student);
  ccl::teacher_epoch_update(teacher, student, 0.996);
  const auto t1 = ccl::flatten(teacher);
  for (std::size_t i = 0; i < t0.size(); ++i) EXPECT_NEAR(t1[i] - t0[i], 0.004 * (s[i] - t0[i]), 1e-15);

  ccl::EncoderParams frozen = ccl::init_params({4, {6, 3}}, 2);
  const ccl::EncoderParams copy = frozen;
  ccl::teacher_epoch_update(frozen, student, 1.0);
  EXPECT_EQ(frozen, copy);
  EXPECT_THROW(ccl::teacher_epoch_update(frozen, ccl::init_params({4, {5, 3}}, 0), 0.5), ccl::Error);
}
