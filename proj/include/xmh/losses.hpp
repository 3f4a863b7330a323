#pragma once

#include <span>
#include <utility>

#include "xmh/ndcore.hpp"
#include "xmh/networks.hpp"

namespace xmh {

struct HyperParams {
  double alpha = 1.0;   // J1, semantic-feature likelihood
  double gamma = 1.0;   // J2, hash-output likelihood
  double eta = 1e-4;    // J3, quantization
  double beta = 1e-4;   // J4, label prediction
};

struct LossReport {
  double j1 = 0.0;
  double j2 = 0.0;
  double j3 = 0.0;
  double j4 = 0.0;
  double total = 0.0;

  LossReport& operator+=(const LossReport& o);
};

enum class GeneratorRole : std::uint8_t { kLabel, kImage, kText };

// Rows of `a` and `b` are instances. With theta_ij = <a_i, b_j> / 2:
//   -sum_ij (S_ij * theta_ij - log(1 + e^theta_ij))
double pairwise_nll(const Matrix& a, const Matrix& b, const Matrix& similarity);
NodeId pairwise_nll(Tape& tape, NodeId a, NodeId b, NodeId similarity);

// ||H - B||_F^2, B restricted to {-1, +1}.
double quantization_loss(const Matrix& hash, const Matrix& codes);
NodeId quantization_loss(Tape& tape, NodeId hash, const Matrix& codes);

// ||L_hat - L||_F^2.
double classification_loss(const Matrix& predicted, const Matrix& truth);
NodeId classification_loss(Tape& tape, NodeId predicted, const Matrix& truth);

// sum (d_real - 1)^2 + sum d_fake^2: label-derived features are class 1,
// modality features class 0.
double adversarial_objective(std::span<const double> real_scores, std::span<const double> fake_scores);
NodeId adversarial_real_term(Tape& tape, NodeId real_scores);
NodeId adversarial_fake_term(Tape& tape, NodeId fake_scores);

struct ObjectiveNodes {
  NodeId j1, j2, j3, j4, total;
  LossReport report(const Tape& tape) const;
};

// alpha*J1 + gamma*J2 + eta*J3 + beta*J4 for one generator. For the label
// network `outputs` and `label_outputs` are the same nodes; for image/text the
// pairwise terms pair label-network rows (i) with modality rows (j).
ObjectiveNodes generator_objective(Tape& tape, const GeneratorNodes& outputs,
                                   const GeneratorNodes& label_outputs, const Matrix& similarity,
                                   const Matrix& code_slice, const Matrix& truth,
                                   const HyperParams& hyper, GeneratorRole role);

// Value-level variant over already evaluated outputs.
LossReport generator_objective(const ModalityOutput& outputs, const ModalityOutput& label_outputs,
                               const Matrix& similarity, const Matrix& code_slice,
                               const Matrix& truth, const HyperParams& hyper, GeneratorRole role);

struct Totals {
  double generator = 0.0;    // L^v + L^t + L^l
  double adversarial = 0.0;  // L_adv^v + L_adv^t
};

Totals compose_totals(double label_loss, double image_loss, double text_loss, double adv_image,
                      double adv_text);

}  // namespace xmh
