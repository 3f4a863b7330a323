#include "xmh/losses.hpp"

#include <cmath>
#include <string>

#include "xmh/errors.hpp"

namespace xmh {
namespace {

void require_codes(const Matrix& codes) {
  for (double v : codes.data()) {
    if (v != 1.0 && v != -1.0) throw ContractError("quantization_loss: code entries must be -1 or +1");
  }
}

void require_same(const Matrix& a, const Matrix& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(what) + ": " + a.shape_string() + " vs " + b.shape_string());
  }
}

}  // namespace

LossReport& LossReport::operator+=(const LossReport& o) {
  j1 += o.j1;
  j2 += o.j2;
  j3 += o.j3;
  j4 += o.j4;
  total += o.total;
  return *this;
}

double pairwise_nll(const Matrix& a, const Matrix& b, const Matrix& similarity) {
  Tape tape;
  return tape.scalar(pairwise_nll(tape, tape.constant(a), tape.constant(b), tape.constant(similarity)));
}

NodeId pairwise_nll(Tape& tape, NodeId a, NodeId b, NodeId similarity) {
  const Matrix& fa = tape.value(a);
  const Matrix& fb = tape.value(b);
  const Matrix& s = tape.value(similarity);
  if (fa.cols() != fb.cols()) {
    throw ContractError("pairwise_nll: feature widths differ (" + fa.shape_string() + " vs " +
                        fb.shape_string() + ")");
  }
  if (s.rows() != fa.rows() || s.cols() != fb.rows()) {
    throw ContractError("pairwise_nll: similarity " + s.shape_string() + " does not match " +
                        std::to_string(fa.rows()) + "x" + std::to_string(fb.rows()) + " pairs");
  }
  const NodeId theta = tape.scale(tape.matmul_transposed(a, b), 0.5);
  return tape.sub(tape.sum(tape.softplus(theta)), tape.sum(tape.hadamard(similarity, theta)));
}

double quantization_loss(const Matrix& hash, const Matrix& codes) {
  Tape tape;
  return tape.scalar(quantization_loss(tape, tape.constant(hash), codes));
}

NodeId quantization_loss(Tape& tape, NodeId hash, const Matrix& codes) {
  require_same(tape.value(hash), codes, "quantization_loss");
  require_codes(codes);
  return tape.squared_norm(tape.sub(hash, tape.constant(codes)));
}

double classification_loss(const Matrix& predicted, const Matrix& truth) {
  Tape tape;
  return tape.scalar(classification_loss(tape, tape.constant(predicted), truth));
}

NodeId classification_loss(Tape& tape, NodeId predicted, const Matrix& truth) {
  require_same(tape.value(predicted), truth, "classification_loss");
  return tape.squared_norm(tape.sub(predicted, tape.constant(truth)));
}

double adversarial_objective(std::span<const double> real_scores, std::span<const double> fake_scores) {
  double total = 0.0;
  for (double d : real_scores) total += (d - 1.0) * (d - 1.0);
  for (double d : fake_scores) total += d * d;
  return total;
}

NodeId adversarial_real_term(Tape& tape, NodeId real_scores) {
  return tape.squared_norm(tape.add_scalar(real_scores, -1.0));
}

NodeId adversarial_fake_term(Tape& tape, NodeId fake_scores) { return tape.squared_norm(fake_scores); }

LossReport ObjectiveNodes::report(const Tape& tape) const {
  return {tape.scalar(j1), tape.scalar(j2), tape.scalar(j3), tape.scalar(j4), tape.scalar(total)};
}

ObjectiveNodes generator_objective(Tape& tape, const GeneratorNodes& outputs,
                                   const GeneratorNodes& label_outputs, const Matrix& similarity,
                                   const Matrix& code_slice, const Matrix& truth,
                                   const HyperParams& hyper, GeneratorRole role) {
  if (role == GeneratorRole::kLabel &&
      (outputs.semantic != label_outputs.semantic || outputs.hash != label_outputs.hash)) {
    throw ContractError("generator_objective: label role must pair the label network with itself");
  }
  const NodeId s = tape.constant(similarity);
  ObjectiveNodes n{};
  n.j1 = pairwise_nll(tape, label_outputs.semantic, outputs.semantic, s);
  n.j2 = pairwise_nll(tape, label_outputs.hash, outputs.hash, s);
  n.j3 = quantization_loss(tape, outputs.hash, code_slice);
  n.j4 = classification_loss(tape, outputs.labels, truth);
  n.total = tape.add(tape.add(tape.scale(n.j1, hyper.alpha), tape.scale(n.j2, hyper.gamma)),
                     tape.add(tape.scale(n.j3, hyper.eta), tape.scale(n.j4, hyper.beta)));
  return n;
}

LossReport generator_objective(const ModalityOutput& outputs, const ModalityOutput& label_outputs,
                               const Matrix& similarity, const Matrix& code_slice,
                               const Matrix& truth, const HyperParams& hyper, GeneratorRole role) {
  Tape tape;
  const GeneratorNodes lab{tape.constant(label_outputs.semantic), tape.constant(label_outputs.hash),
                           tape.constant(label_outputs.labels)};
  GeneratorNodes out = lab;
  if (role != GeneratorRole::kLabel) {
    out = {tape.constant(outputs.semantic), tape.constant(outputs.hash), tape.constant(outputs.labels)};
  }
  return generator_objective(tape, out, lab, similarity, code_slice, truth, hyper, role).report(tape);
}

Totals compose_totals(double label_loss, double image_loss, double text_loss, double adv_image,
                      double adv_text) {
  return {image_loss + text_loss + label_loss, adv_image + adv_text};
}

}  // namespace xmh
