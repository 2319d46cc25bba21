#pragma once

#include "ccl/encoder.hpp"
#include "ccl/error.hpp"
#include "ccl/numerics.hpp"

namespace ccl {

struct DistillResult {
  double loss = 0.0;
  Matrix grad_zS;   // d loss / d zS
  Matrix grad_zSq;  // d loss / d zSq
};

// Similarity-distribution distillation. P^T = softmax(zT zTq^T / tau) and
// P^S = softmax(zS zSq^T / tau) row-wise; the loss is the row-mean
// cross-entropy of P^S against P^T. The teacher side is a constant.
inline DistillResult kd_loss(const FeatureBatch& zT, const FeatureBatch& zTq, const FeatureBatch& zS,
                             const FeatureBatch& zSq, double tau_kd) {
  const std::size_t b = zS.size();
  const std::size_t d = zS.dim();
  for (const FeatureBatch* f : {&zT, &zTq, &zSq})
    if (f->size() != b || f->dim() != d) throw Error("batch mismatch");

  DistillResult r;
  r.grad_zS = Matrix(b, d);
  r.grad_zSq = Matrix(b, d);
  if (b == 0) return r;

  const Matrix p_teacher = softmax_rows(similarity_matrix(zT.embeddings, zTq.embeddings), tau_kd);
  const Matrix p_student = softmax_rows(similarity_matrix(zS.embeddings, zSq.embeddings), tau_kd);
  r.loss = row_cross_entropy(p_teacher, p_student);

  // dL/dS_ij = (P^S_ij * sum_k P^T_ik - P^T_ij) / (tau * B)
  const double scale = 1.0 / (tau_kd * static_cast<double>(b));
  Matrix g_sim(b, b);
  for (std::size_t i = 0; i < b; ++i) {
    double row_mass = 0.0;
    for (std::size_t k = 0; k < b; ++k) row_mass += p_teacher(i, k);
    for (std::size_t j = 0; j < b; ++j) g_sim(i, j) = (p_student(i, j) * row_mass - p_teacher(i, j)) * scale;
  }
  r.grad_zS = matmul(g_sim, zSq.embeddings);
  r.grad_zSq = matmul(transpose(g_sim), zS.embeddings);
  return r;
}

// The teacher starts each task as a copy of the student query encoder.
inline EncoderParams teacher_init(const EncoderParams& student) { return student; }

// theta_t <- m_t * theta_t + (1 - m_t) * theta_q, once per epoch.
inline void teacher_epoch_update(EncoderParams& teacher, const EncoderParams& student, double m_t) {
  momentum_update(teacher, student, m_t);
}

}  // namespace ccl
